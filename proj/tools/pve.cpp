// Batch entry points wiring all modules: data generation, training,
// inversion, editing, RER, kernel benchmarking, and track replay.
//
// Exit codes: 0 success, 2 unknown command, 3 config/argument validation
// failure, 4 pipeline error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "pve/bench.hpp"
#include "pve/config.hpp"
#include "pve/editing.hpp"
#include "pve/inversion.hpp"
#include "pve/rer.hpp"
#include "pve/synth.hpp"
#include "pve/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int g_threads = 1;

void apply_thread_cap() {
    if (const char* env = std::getenv("PVE_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) g_threads = n;
    }
    Eigen::setNbThreads(g_threads);
}

// temp file + rename so a manifest is never observed half-written
void write_json_atomic(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw pve::PipelineError("cannot open for writing: " + tmp.string());
        os << j.dump(2) << "\n";
        if (!os) throw pve::PipelineError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

void save_tensor_atomic(const pve::VideoTensor& t, const fs::path& path) {
    fs::path tmp = path;
    tmp += ".tmp";
    pve::save_tensor(t, tmp.string());
    fs::rename(tmp, path);
}

pve::synth::SceneSpec spec_from_json(const json& j, int frames, int height, int width) {
    if (!j.is_object()) throw pve::ConfigError("scene spec must be an object");
    pve::synth::SceneSpec s;
    s.frames = frames;
    s.height = height;
    s.width = width;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        int v = it.value().get<int>();
        if (k == "shape") s.shape = v;
        else if (k == "color") s.color = v;
        else if (k == "background") s.background = v;
        else if (k == "extra") s.extra = v;
        else if (k == "motion") s.motion = v;
        else throw pve::ConfigError("unknown scene spec field: " + k);
    }
    try {
        s.validate();
    } catch (const pve::ContractError& e) {
        throw pve::ConfigError(e.what());
    }
    return s;
}

json spec_to_json(const pve::synth::SceneSpec& s) {
    return json{{"shape", s.shape}, {"color", s.color}, {"background", s.background},
                {"extra", s.extra}, {"motion", s.motion}};
}

json base_manifest(const std::string& command, const pve::RunConfig& rc) {
    return json{{"command", command}, {"config", rc.doc}, {"threads", g_threads}};
}

pve::RunConfig load_config(const std::string& path) {
    return path.empty() ? pve::RunConfig::from_json(json::object()) : pve::RunConfig::from_file(path);
}

// ---- commands ---------------------------------------------------------------

int cmd_gen_data(const std::string& config_path, int count, uint64_t seed, const std::string& out) {
    pve::RunConfig rc = load_config(config_path);
    if (count > 0) rc.doc["data"]["count"] = count;
    rc.doc["seeds"]["data"] = seed;
    const auto& dc = rc.doc["data"];
    pve::RngStream stream{seed, pve::RngPurpose::Dataset, 0};
    auto items = pve::synth::make_dataset(dc["count"].get<int>(), stream, dc["frames"].get<int>(),
                                          dc["height"].get<int>(), dc["width"].get<int>());
    fs::create_directories(out);
    std::string lines;
    for (size_t i = 0; i < items.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "item_%04zu.vten", i);
        save_tensor_atomic(items[i].video, fs::path(out) / name);
        pve::synth::SceneSpec spec = pve::synth::decode_prompt(items[i].prompt, dc["frames"].get<int>(),
                                                               dc["height"].get<int>(), dc["width"].get<int>());
        json rec = spec_to_json(spec);
        rec["path"] = name;
        lines += rec.dump() + "\n";
    }
    {
        fs::path jl = fs::path(out) / "dataset.jsonl";
        fs::path tmp = jl;
        tmp += ".tmp";
        std::ofstream os(tmp);
        os << lines;
        if (!os) throw pve::PipelineError("write failed: " + tmp.string());
        os.close();
        fs::rename(tmp, jl);
    }
    json man = base_manifest("gen-data", rc);
    man["metrics"] = {{"items", items.size()}};
    write_json_atomic(fs::path(out) / "manifest.json", man);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out) {
    pve::RunConfig rc = load_config(config_path);
    pve::ToyDiTConfig mc = rc.model();
    pve::NoiseSchedule sched = rc.schedule();
    const auto& tc = rc.doc["train"];

    pve::RngStream data_stream{rc.seed("data"), pve::RngPurpose::Dataset, 0};
    auto dataset = pve::synth::make_dataset(tc["dataset_size"].get<int>(), data_stream, mc.max_frames, mc.height,
                                            mc.width);

    pve::ToyDiTNet<float> net(mc);
    pve::RngStream init_stream{rc.seed("init"), pve::RngPurpose::InitNoise, 0};
    net.init_weights(init_stream);

    pve::TrainOpts topts;
    topts.lr = tc["lr"].get<double>();
    topts.prompt_dropout = tc["prompt_dropout"].get<double>();
    pve::Trainer<float> trainer(net, topts);

    pve::RngStream train_stream{rc.seed("train"), pve::RngPurpose::Training, 0};
    const int steps = tc["steps"].get<int>();
    const int batch = tc["batch"].get<int>();
    std::vector<double> losses;
    losses.reserve(static_cast<size_t>(steps));
    for (int s = 0; s < steps; ++s) {
        std::vector<std::pair<const pve::VideoTensor*, pve::PromptTokens>> items;
        for (int b = 0; b < batch; ++b) {
            size_t idx = static_cast<size_t>(train_stream.next_below(dataset.size()));
            items.emplace_back(&dataset[idx].video, dataset[idx].prompt);
        }
        auto prepared = pve::prepare_batch(items, sched, train_stream, topts.prompt_dropout);
        losses.push_back(trainer.step(prepared));
    }

    auto window_mean = [&](size_t lo, size_t hi) {
        double acc = 0.0;
        for (size_t i = lo; i < hi; ++i) acc += losses[i];
        return acc / static_cast<double>(hi - lo);
    };
    size_t w = std::min<size_t>(100, losses.size());
    double first = window_mean(0, w), last = window_mean(losses.size() - w, losses.size());

    fs::create_directories(out);
    fs::path ckpt = fs::path(out) / "checkpoint.vckp";
    fs::path tmp = ckpt;
    tmp += ".tmp";
    net.save_checkpoint(tmp.string());
    fs::rename(tmp, ckpt);

    json man = base_manifest("train", rc);
    man["metrics"] = {{"steps", steps},
                      {"first_window_loss", first},
                      {"last_window_loss", last},
                      {"final_loss", losses.back()}};
    man["outputs"] = {{"checkpoint", "checkpoint.vckp"}};
    write_json_atomic(fs::path(out) / "manifest.json", man);
    return 0;
}

int cmd_invert(const std::string& config_path, const std::string& video_path, double alpha,
               const std::string& ckpt_path, const std::string& out) {
    pve::RunConfig rc = load_config(config_path);
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw pve::ConfigError("--alpha must lie in [0, 1]");
    pve::NoiseSchedule sched = rc.schedule();
    pve::VideoTensor v0 = pve::load_tensor(video_path);
    auto net = pve::ToyDiTNet<float>::load_checkpoint(ckpt_path);
    pve::ToyDiTModel model(std::move(net));

    pve::InvertOpts iopts;
    iopts.sampler = pve::RunConfig::parse_sampler(rc.doc["sched"]["sampler"].get<std::string>());
    iopts.guidance.cfg = false;  // unconditional by default; replay matches
    pve::PromptTokens prompt = pve::PromptTokens::null_prompt(model.net().cfg.prompt_len);

    pve::RngStream stream{rc.seed("sampling"), pve::RngPurpose::Sampling, 0};
    pve::LatentTrack track = pve::invert(v0, alpha, model, prompt, sched, stream, iopts);
    pve::VideoTensor rt = track.alpha_steps == 0 ? track.start
                                                 : pve::replay(track, model, prompt, sched, iopts.guidance);
    float err = pve::max_abs_diff(rt, v0);

    fs::create_directories(out);
    {
        fs::path tp = fs::path(out) / "track.vtrk";
        fs::path tmp = tp;
        tmp += ".tmp";
        pve::save_track(track, tmp.string());
        fs::rename(tmp, tp);
    }
    json man = base_manifest("invert", rc);
    man["metrics"] = {{"alpha", alpha}, {"alpha_steps", track.alpha_steps}, {"replay_max_abs_error", err}};
    man["outputs"] = {{"track", "track.vtrk"}};
    write_json_atomic(fs::path(out) / "manifest.json", man);
    return 0;
}

int cmd_edit(const std::string& config_path, const std::string& video_path, const std::string& ckpt_path,
             const std::string& out) {
    pve::RunConfig rc = load_config(config_path);
    const json& src_j = rc.doc["edit"]["source_spec"];
    const json& dst_j = rc.doc["edit"]["target_spec"];
    if (src_j.is_null() || dst_j.is_null())
        throw pve::ConfigError("edit requires edit.source_spec and edit.target_spec");

    pve::NoiseSchedule sched = rc.schedule();
    pve::ControlConfig cc = rc.control();
    pve::VideoTensor v0 = pve::load_tensor(video_path);
    auto net = pve::ToyDiTNet<float>::load_checkpoint(ckpt_path);
    pve::ToyDiTModel model(std::move(net));

    const auto& d = v0.dims();
    pve::synth::SceneSpec src = spec_from_json(src_j, static_cast<int>(d.f), static_cast<int>(d.h),
                                               static_cast<int>(d.w));
    pve::synth::SceneSpec dst = spec_from_json(dst_j, static_cast<int>(d.f), static_cast<int>(d.h),
                                               static_cast<int>(d.w));
    pve::EditPlan plan = pve::plan_progression(pve::synth::encode_prompt(src), pve::synth::encode_prompt(dst),
                                               cc.max_subtasks);

    pve::RngStream stream{rc.seed("sampling"), pve::RngPurpose::Sampling, 0};
    pve::ProgressionResult res = pve::run_progression(v0, plan, cc, model, sched, stream);

    fs::create_directories(out);
    json subtasks = json::array();
    pve::RngStream mask_stream{rc.seed("data"), pve::RngPurpose::Dataset, 0};
    pve::synth::LabeledVideo src_lv = pve::synth::gen_video(src, mask_stream);
    for (const auto& st : res.subtasks) {
        char dir[32];
        std::snprintf(dir, sizeof(dir), "subtask_%d", st.index);
        pve::export_frames(st.edited, (fs::path(out) / dir).string());
        json rec = {{"index", st.index}, {"steps", st.diagnostics.size()}};
        rec["background_psnr_db"] =
            pve::synth::psnr_masked(st.edited, v0, src_lv.masks[pve::synth::SlotBackground]);
        subtasks.push_back(rec);
    }
    pve::export_frames(res.final_video, (fs::path(out) / "final").string());
    save_tensor_atomic(res.final_video, fs::path(out) / "final.vten");

    json man = base_manifest("edit", rc);
    man["metrics"] = {{"subtasks", subtasks},
                      {"final_background_psnr_db",
                       pve::synth::psnr_masked(res.final_video, v0, src_lv.masks[pve::synth::SlotBackground])}};
    man["outputs"] = {{"final", "final.vten"}};
    write_json_atomic(fs::path(out) / "manifest.json", man);
    return 0;
}

pve::rer::CameraPath path_from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw pve::ConfigError("cannot open path file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw pve::ConfigError(std::string("path parse error: ") + e.what());
    }
    pve::rer::CameraPath cp;
    try {
        cp.frame_h = j.at("frame_h").get<int>();
        cp.frame_w = j.at("frame_w").get<int>();
        cp.loop = j.value("loop", false);
        for (const auto& w : j.at("windows")) cp.windows.emplace_back(w.at(0).get<int>(), w.at(1).get<int>());
    } catch (const json::exception& e) {
        throw pve::ConfigError(std::string("bad path file: ") + e.what());
    }
    return cp;
}

int cmd_rer(const std::string& config_path, const std::string& scene_path, const std::string& path_path,
            const std::string& ckpt_path, const std::string& out) {
    pve::RunConfig rc = load_config(config_path);
    const json& src_j = rc.doc["edit"]["source_spec"];
    const json& dst_j = rc.doc["edit"]["target_spec"];
    if (src_j.is_null() || dst_j.is_null())
        throw pve::ConfigError("rer requires edit.source_spec and edit.target_spec");

    pve::rer::PlanarScene scene;
    scene.texture = pve::load_tensor(scene_path);
    if (scene.texture.dims().f != 1 || scene.texture.dims().c != 3)
        throw pve::ConfigError("scene tensor must have F=1, C=3");
    pve::rer::CameraPath cp = path_from_file(path_path);
    try {
        cp.validate(scene.height(), scene.width());
    } catch (const pve::ContractError& e) {
        throw pve::ConfigError(e.what());
    }

    pve::NoiseSchedule sched = rc.schedule();
    pve::ControlConfig cc = rc.control();
    auto net = pve::ToyDiTNet<float>::load_checkpoint(ckpt_path);
    pve::ToyDiTModel model(std::move(net));

    pve::synth::SceneSpec src = spec_from_json(src_j, static_cast<int>(cp.windows.size()), cp.frame_h, cp.frame_w);
    pve::synth::SceneSpec dst = spec_from_json(dst_j, static_cast<int>(cp.windows.size()), cp.frame_h, cp.frame_w);
    pve::EditPlan plan = pve::plan_progression(pve::synth::encode_prompt(src), pve::synth::encode_prompt(dst),
                                               cc.max_subtasks);

    pve::RngStream stream{rc.seed("sampling"), pve::RngPurpose::Sampling, 0};
    pve::rer::RerResult res = pve::rer::rer_edit(scene, cp, plan, cc, model, sched, stream);

    fs::create_directories(out);
    save_tensor_atomic(res.final_scene.texture, fs::path(out) / "scene.vten");
    save_tensor_atomic(res.progression.final_video, fs::path(out) / "final.vten");
    pve::export_frames(res.progression.final_video, (fs::path(out) / "final").string());

    json man = base_manifest("rer", rc);
    man["metrics"] = {{"subtasks", res.progression.subtasks.size()},
                      {"final_consistency", pve::rer::consistency_metric(res.progression.final_video, cp)}};
    man["outputs"] = {{"scene", "scene.vten"}, {"final", "final.vten"}};
    write_json_atomic(fs::path(out) / "manifest.json", man);
    return 0;
}

int cmd_attnbench(const std::string& config_path, const std::string& grid_arg, const std::string& out) {
    pve::RunConfig rc = load_config(config_path);
    std::vector<int> grid;
    if (!grid_arg.empty()) {
        size_t pos = 0;
        std::string rest = grid_arg;
        while (!rest.empty()) {
            pos = rest.find(',');
            std::string tok = rest.substr(0, pos);
            try {
                grid.push_back(std::stoi(tok));
            } catch (const std::exception&) {
                throw pve::ConfigError("bad --grid entry: " + tok);
            }
            if (pos == std::string::npos) break;
            rest = rest.substr(pos + 1);
        }
        rc.doc["bench"]["grid"] = grid;
    } else {
        for (const auto& g : rc.doc["bench"]["grid"]) grid.push_back(g.get<int>());
    }
    const int reps = rc.doc["bench"]["reps"].get<int>();
    const int d = rc.doc["bench"]["dim"].get<int>();
    const int dv = rc.doc["bench"]["dim_v"].get<int>();

    auto rows = pve::bench::run_bench(grid, reps, d, dv);
    json report = json::array();
    for (const auto& r : rows) {
        report.push_back({{"size", r.size},
                          {"naive_ms", r.naive_ms},
                          {"streaming_ms", r.streaming_ms},
                          {"naive_aux_bytes", r.naive_aux_bytes},
                          {"streaming_aux_bytes", r.streaming_aux_bytes},
                          {"max_rel_deviation", r.max_rel_dev},
                          {"speedup", r.streaming_ms > 0 ? r.naive_ms / r.streaming_ms : 0.0}});
    }
    fs::create_directories(out);
    json man = base_manifest("attnbench", rc);
    man["metrics"] = {{"rows", report}};
    write_json_atomic(fs::path(out) / "manifest.json", man);
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_replay(const std::string& config_path, const std::string& track_path, const std::string& ckpt_path,
               const std::string& out) {
    pve::RunConfig rc = load_config(config_path);
    pve::NoiseSchedule sched = rc.schedule();
    pve::LatentTrack track = pve::load_track(track_path);
    if (track.alpha_steps > sched.steps)
        throw pve::ConfigError("track has more steps than the configured schedule");
    auto net = pve::ToyDiTNet<float>::load_checkpoint(ckpt_path);
    pve::ToyDiTModel model(std::move(net));
    pve::PromptTokens prompt = pve::PromptTokens::null_prompt(model.net().cfg.prompt_len);

    pve::GuidanceOpts g;  // unconditional; matches the invert command
    pve::VideoTensor v = track.alpha_steps == 0 ? track.start : pve::replay(track, model, prompt, sched, g);

    fs::create_directories(out);
    save_tensor_atomic(v, fs::path(out) / "replayed.vten");
    json man = base_manifest("replay", rc);
    man["metrics"] = {{"alpha_steps", track.alpha_steps}};
    man["outputs"] = {{"replayed", "replayed.vten"}};
    write_json_atomic(fs::path(out) / "manifest.json", man);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();

    CLI::App app{"progressive video editing toolkit"};
    app.require_subcommand(1);

    std::string config_path, video_path, ckpt_path, track_path, scene_path, path_path, out, grid;
    double alpha = 0.9;
    int count = 0;
    uint64_t seed = 0;

    auto* gen = app.add_subcommand("gen-data", "generate a labeled synthetic dataset");
    gen->add_option("--count", count, "number of videos");
    gen->add_option("--seed", seed, "dataset seed");
    gen->add_option("--config", config_path, "config file");
    gen->add_option("--out", out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train the toy denoiser");
    train->add_option("--config", config_path, "config file");
    train->add_option("--out", out, "output directory")->required();

    auto* invert = app.add_subcommand("invert", "extract the latent track of a video");
    invert->add_option("--video", video_path, "source video (VTEN)")->required();
    invert->add_option("--alpha", alpha, "noising fraction")->required();
    invert->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    invert->add_option("--config", config_path, "config file");
    invert->add_option("--out", out, "output directory")->required();

    auto* edit = app.add_subcommand("edit", "run the progressive editing pipeline");
    edit->add_option("--video", video_path, "source video (VTEN)")->required();
    edit->add_option("--config", config_path, "config file with edit.source_spec/target_spec")->required();
    edit->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    edit->add_option("--out", out, "output directory")->required();

    auto* rer = app.add_subcommand("rer", "render-edit-reconstruct loop");
    rer->add_option("--scene", scene_path, "scene texture (VTEN, F=1)")->required();
    rer->add_option("--path", path_path, "camera path (JSON)")->required();
    rer->add_option("--config", config_path, "config file with edit.source_spec/target_spec")->required();
    rer->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    rer->add_option("--out", out, "output directory")->required();

    auto* bench = app.add_subcommand("attnbench", "benchmark naive vs streaming attention replacement");
    bench->add_option("--grid", grid, "comma-separated sizes");
    bench->add_option("--config", config_path, "config file");
    bench->add_option("--out", out, "output directory")->required();

    auto* rep = app.add_subcommand("replay", "replay a saved latent track");
    rep->add_option("--track", track_path, "latent track (VTRK)")->required();
    rep->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    rep->add_option("--config", config_path, "config file");
    rep->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ExtrasError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const CLI::ParseError& e) {
        // a recognized subcommand with bad/missing flags is a validation failure
        std::cerr << "error: " << e.what() << "\n";
        return app.get_subcommands().empty() ? 2 : 3;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, count, seed, out);
        if (train->parsed()) return cmd_train(config_path, out);
        if (invert->parsed()) return cmd_invert(config_path, video_path, alpha, ckpt_path, out);
        if (edit->parsed()) return cmd_edit(config_path, video_path, ckpt_path, out);
        if (rer->parsed()) return cmd_rer(config_path, scene_path, path_path, ckpt_path, out);
        if (bench->parsed()) return cmd_attnbench(config_path, grid, out);
        if (rep->parsed()) return cmd_replay(config_path, track_path, ckpt_path, out);
    } catch (const pve::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const pve::Error& e) {
        std::cerr << "pipeline error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "pipeline error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
