#ifndef PVE_CONFIG_HPP
#define PVE_CONFIG_HPP

#include <json.hpp>
#include <fstream>
#include <set>
#include <string>

#include "pve/editing.hpp"
#include "pve/schedule.hpp"
#include "pve/toydit.hpp"

namespace pve {

// Strict namespaced configuration document. Unknown keys are rejected; every
// run echoes the fully resolved document into its manifest.
struct RunConfig {
    nlohmann::json doc;

    static const std::set<std::string>& known_keys() {
        static const std::set<std::string> keys = {
            "sched.steps", "sched.beta_start", "sched.beta_end", "sched.sampler", "sched.ddim_stride",
            "model.patch", "model.embed", "model.heads", "model.layers", "model.vocab", "model.prompt_len",
            "model.max_frames", "model.height", "model.width", "model.channels", "model.linear_only",
            "edit.alpha", "edit.beta", "edit.guidance_scale", "edit.lambda", "edit.max_subtasks", "edit.sampler",
            "edit.source_spec", "edit.target_spec",
            "train.steps", "train.batch", "train.lr", "train.prompt_dropout", "train.dataset_size",
            "data.count", "data.frames", "data.height", "data.width",
            "bench.grid", "bench.reps", "bench.dim", "bench.dim_v",
            "inversion.cfg",
            "seeds.train", "seeds.data", "seeds.sampling", "seeds.init",
        };
        return keys;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig rc;
        rc.doc = defaults();
        rc.merge(j, "");
        return rc;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        return from_json(j);
    }

    static nlohmann::json defaults() {
        return nlohmann::json{
            {"sched", {{"steps", 100}, {"beta_start", 1e-4}, {"beta_end", 0.02}, {"sampler", "ddpm"}, {"ddim_stride", 1}}},
            {"model",
             {{"patch", 4}, {"embed", 128}, {"heads", 4}, {"layers", 4}, {"vocab", 64}, {"prompt_len", 5},
              {"max_frames", 8}, {"height", 32}, {"width", 32}, {"channels", 3}, {"linear_only", false}}},
            {"edit",
             {{"alpha", 0.9}, {"beta", 0.5}, {"guidance_scale", 7.0}, {"lambda", 0.5}, {"max_subtasks", 6},
              {"sampler", "ddpm"}, {"source_spec", nullptr}, {"target_spec", nullptr}}},
            {"train", {{"steps", 2000}, {"batch", 2}, {"lr", 1e-2}, {"prompt_dropout", 0.1}, {"dataset_size", 192}}},
            {"data", {{"count", 16}, {"frames", 8}, {"height", 32}, {"width", 32}}},
            {"bench", {{"grid", {128, 256, 512, 1024, 2048, 4096}}, {"reps", 5}, {"dim", 64}, {"dim_v", 64}}},
            {"inversion", {{"cfg", true}}},
            {"seeds", {{"train", 0}, {"data", 0}, {"sampling", 0}, {"init", 0}}},
        };
    }

    // dotted-path override, e.g. set("edit.alpha", "0.8")
    void set_path(const std::string& path, const std::string& value) {
        nlohmann::json v;
        try {
            v = nlohmann::json::parse(value);
        } catch (const nlohmann::json::exception&) {
            v = value;  // bare string
        }
        nlohmann::json patch;
        nlohmann::json* cur = &patch;
        size_t pos = 0;
        std::string rest = path;
        while ((pos = rest.find('.')) != std::string::npos) {
            cur = &((*cur)[rest.substr(0, pos)]);
            rest = rest.substr(pos + 1);
        }
        (*cur)[rest] = v;
        merge(patch, "");
    }

    NoiseSchedule schedule() const {
        try {
            return make_linear_schedule(doc["sched"]["steps"].get<int>(), doc["sched"]["beta_start"].get<double>(),
                                        doc["sched"]["beta_end"].get<double>());
        } catch (const ScheduleError& e) {
            throw ConfigError(std::string("sched: ") + e.what());
        }
    }

    static SamplerTag parse_sampler(const std::string& s) {
        if (s == "ddpm") return SamplerTag::Ddpm;
        if (s == "ddim") return SamplerTag::Ddim;
        throw ConfigError("sampler must be 'ddpm' or 'ddim', got '" + s + "'");
    }

    ToyDiTConfig model() const {
        const auto& m = doc["model"];
        ToyDiTConfig c;
        c.patch = m["patch"].get<int>();
        c.embed = m["embed"].get<int>();
        c.heads = m["heads"].get<int>();
        c.layers = m["layers"].get<int>();
        c.vocab = m["vocab"].get<int>();
        c.prompt_len = m["prompt_len"].get<int>();
        c.max_frames = m["max_frames"].get<int>();
        c.height = m["height"].get<int>();
        c.width = m["width"].get<int>();
        c.channels = m["channels"].get<int>();
        c.linear_only = m["linear_only"].get<bool>();
        c.validate();
        return c;
    }

    ControlConfig control() const {
        const auto& e = doc["edit"];
        ControlConfig c;
        c.alpha = e["alpha"].get<double>();
        c.beta = e["beta"].get<double>();
        c.guidance_scale = e["guidance_scale"].get<double>();
        c.lambda = e["lambda"].get<double>();
        c.max_subtasks = e["max_subtasks"].get<int>();
        c.sampler = parse_sampler(e["sampler"].get<std::string>());
        c.validate();
        return c;
    }

    uint64_t seed(const std::string& name) const { return doc["seeds"][name].get<uint64_t>(); }

private:
    void merge(const nlohmann::json& j, const std::string& prefix) {
        if (!j.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
        for (auto it = j.begin(); it != j.end(); ++it) {
            std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
            if (it.value().is_object() && !known_keys().count(key)) {
                merge(it.value(), key);
            } else {
                if (!known_keys().count(key)) throw ConfigError("unknown config key: " + key);
                nlohmann::json* cur = &doc;
                std::string rest = key;
                size_t pos;
                while ((pos = rest.find('.')) != std::string::npos) {
                    cur = &((*cur)[rest.substr(0, pos)]);
                    rest = rest.substr(pos + 1);
                }
                (*cur)[rest] = it.value();
            }
        }
    }
};

}  // namespace pve

#endif
