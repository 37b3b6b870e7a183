// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train a work-element classifier, evaluate it,
// compute dataset statistics, generate synthetic data, and segment long
// recordings into labeled work-element timelines.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "timestudy/segment.hpp"
#include "timestudy/synthgen.hpp"
#include "timestudy/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::array<std::size_t, 4> parse_quad(const std::string& s, const char* what) {
    std::array<std::size_t, 4> out{};
    std::stringstream ss(s);
    std::string tok;
    std::size_t i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= 4) throw CLI::ValidationError(std::string(what) + ": expected 4 comma-separated values");
        out[i++] = static_cast<std::size_t>(std::stoull(tok));
    }
    if (i != 4) throw CLI::ValidationError(std::string(what) + ": expected 4 comma-separated values");
    return out;
}

void print_report(const ts::MetricsReport& r) {
    // headline metrics, F1 first
    std::printf("f1_macro         %.4f\n", r.f1_macro);
    std::printf("precision_macro  %.4f\n", r.precision_macro);
    std::printf("recall_macro     %.4f\n", r.recall_macro);
    std::printf("accuracy         %.4f\n", r.accuracy);
    std::printf("ce_loss_mean     %.4f\n", r.ce_loss_mean);
}

int cmd_stats(const std::string& manifest_path, std::size_t bin_width, const std::string& out_json) {
    auto entries = ts::load_manifest(manifest_path);
    auto stats = ts::compute_stats(entries, bin_width);
    std::printf("%-28s %8s\n", "class", "clips");
    for (const auto& label : ts::ClassVocabulary::full())
        std::printf("%-28s %8zu\n", label.c_str(), stats.per_class.at(label).count);
    if (!out_json.empty()) {
        std::ofstream os(out_json);
        if (!os) throw ts::data_error("stats: cannot write " + out_json);
        os << ts::stats_to_json(stats).dump(2) << "\n";
        std::printf("stats written to %s\n", out_json.c_str());
    } else {
        std::printf("%s\n", ts::stats_to_json(stats).dump(2).c_str());
    }
    return 0;
}

ts::MetricsReport evaluate_with_model(ts::LoadedModel& lm, const std::string& manifest_path,
                                      const ts::TrainConfig& tc) {
    auto entries = ts::filter_active(ts::load_manifest(manifest_path));
    std::vector<ts::ManifestEntry> val;
    for (const auto& e : entries)
        if (e.split == "val") val.push_back(e);
    if (val.empty()) throw ts::data_error("eval: no active-class val entries in manifest");

    lm.model->set_training(false);
    ts::NoGradGuard ng;
    ts::ConfusionMatrix cm(ts::ClassVocabulary::active().size());
    std::vector<double> probs;
    std::vector<std::size_t> truths;
    ts::ClipCache cache(manifest_path);
    for (const auto& e : val) {
        auto win = ts::sample_clip_window(e, tc.clip_seconds, false);
        ts::FrameClip clip = ts::slice_frames(cache.get(e), win.start, win.length);
        auto x = ts::val_transform(clip, lm.transform_config);
        auto x5 = ts::reshape(x, {1, x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]});
        auto logits = lm.model->forward(x5);
        auto p = ts::nn::softmax_rows(logits.data(), 1, lm.model_config.num_classes);
        std::size_t truth = ts::ClassVocabulary::active_index(e.label);
        std::size_t pred = static_cast<std::size_t>(
            std::max_element(p.begin(), p.end()) - p.begin());
        cm.accumulate({truth}, {pred});
        for (float v : p) probs.push_back(v);
        truths.push_back(truth);
    }
    double ce = ts::cross_entropy_metric(probs, lm.model_config.num_classes, truths);
    return ts::make_report(cm, ce);
}

int run(int argc, char** argv) {
    CLI::App app{"work-element video classification and time-study toolchain"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    int threads = static_cast<int>(std::thread::hardware_concurrency());
    app.add_option("--seed", seed, "global random seed");
    app.add_option("--threads", threads, "worker thread count (1 = fully serial)");

    // ---- train ----
    auto* train = app.add_subcommand("train", "train the classifier on a manifest");
    std::string t_manifest, t_out = "run";
    ts::TrainConfig tc;
    ts::TransformConfig tfc;
    std::string mid_channels = "64,128,256,512", temporal_strides = "1,1,1,1";
    std::size_t stem_channels = 64;
    train->add_option("--manifest", t_manifest, "manifest CSV")->required();
    train->add_option("--out", t_out, "output directory (checkpoints + log)");
    train->add_option("--max-epochs", tc.max_epochs, "epoch limit");
    train->add_option("--batch-size", tc.batch_size, "batch size");
    train->add_option("--lr", tc.learning_rate, "learning rate");
    train->add_option("--clip-seconds", tc.clip_seconds, "sampled window length in seconds");
    train->add_option("--frames", tfc.num_frames, "frames per clip after subsampling");
    train->add_option("--crop", tfc.crop_size, "crop size");
    train->add_option("--train-scale-min", tfc.train_scale_min, "training short-side scale lower bound");
    train->add_option("--train-scale-max", tfc.train_scale_max, "training short-side scale upper bound");
    train->add_option("--val-scale", tfc.val_scale, "validation short-side scale");
    train->add_option("--stem-channels", stem_channels, "stem output channels");
    train->add_option("--mid-channels", mid_channels, "bottleneck mid channels per stage, e.g. 16,32,64,128");
    train->add_option("--temporal-strides", temporal_strides, "per-stage temporal strides");

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the val split");
    std::string e_manifest, e_ckpt, e_out = "metrics.json";
    double e_clip_seconds = 4.0;
    eval->add_option("--manifest", e_manifest, "manifest CSV")->required();
    eval->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
    eval->add_option("--out", e_out, "metrics report JSON path");
    eval->add_option("--clip-seconds", e_clip_seconds, "window length in seconds");

    // ---- segment ----
    auto* segment = app.add_subcommand("segment", "segment a long video into a work-element timeline");
    std::string s_video, s_ckpt, s_out = "timeline";
    ts::SegmenterConfig scfg;
    segment->add_option("--video", s_video, "input .rvf video (or PPM directory)")->required();
    segment->add_option("--checkpoint", s_ckpt, "trained checkpoint")->required();
    segment->add_option("--out", s_out, "output prefix (.json and .csv)");
    segment->add_option("--window", scfg.window_seconds, "window length in seconds");
    segment->add_option("--stride", scfg.stride_seconds, "window stride in seconds");
    segment->add_option("--smooth", scfg.smoothing, "majority-vote smoothing width (odd)");
    double s_fps = 30.0;
    segment->add_option("--fps", s_fps, "frame rate when reading a PPM directory");

    // ---- stats ----
    auto* stats = app.add_subcommand("stats", "dataset statistics from a manifest");
    std::string st_manifest, st_out;
    std::size_t st_bin = 1000;
    stats->add_option("--manifest", st_manifest, "manifest CSV")->required();
    stats->add_option("--bin-width", st_bin, "histogram bin width in frames");
    stats->add_option("--out", st_out, "stats JSON path (default: print)");

    // ---- synthgen ----
    auto* synthgen = app.add_subcommand("synthgen", "generate synthetic clips or a scripted video");
    std::string g_out = "synth", g_script, g_truth;
    std::size_t g_per_class = 8;
    ts::synth::SynthSpec g_spec;
    synthgen->add_option("--out", g_out, "output directory (dataset) or .rvf path (script mode)");
    synthgen->add_option("--per-class", g_per_class, "clips per class (dataset mode)");
    synthgen->add_option("--script", g_script, "timeline script JSON -> one long video");
    synthgen->add_option("--truth", g_truth, "ground-truth segments JSON path (script mode)");
    synthgen->add_option("--width", g_spec.width, "frame width");
    synthgen->add_option("--height", g_spec.height, "frame height");
    synthgen->add_option("--fps", g_spec.fps, "frame rate");
    synthgen->add_option("--noise", g_spec.noise_level, "additive noise level [0, 0.5]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }
    ts::thread_count() = std::max(1, threads);

    if (train->parsed()) {
        tc.seed = seed;
        tc.checkpoint_dir = t_out;
        fs::create_directories(t_out);
        tc.log_path = (fs::path(t_out) / "epochs.jsonl").string();

        ts::ResNetConfig mc;
        mc.stem_out_channels = stem_channels;
        mc.bottleneck_mid_channels = parse_quad(mid_channels, "--mid-channels");
        mc.stage_temporal_strides = parse_quad(temporal_strides, "--temporal-strides");
        ts::ResNet3d<float> model(mc, seed);

        auto entries = ts::load_manifest(t_manifest);
        ts::Trainer trainer(model, entries, t_manifest, tc, tfc);
        std::string best;
        trainer.fit(&best, /*print_progress=*/true);
        std::printf("best checkpoint: %s\n", best.c_str());
        std::printf("epoch log: %s\n", tc.log_path.c_str());
        return 0;
    }

    if (eval->parsed()) {
        auto lm = ts::load_checkpoint(e_ckpt);
        ts::TrainConfig cfg;
        cfg.clip_seconds = e_clip_seconds;
        auto report = evaluate_with_model(lm, e_manifest, cfg);
        print_report(report);
        std::ofstream os(e_out);
        if (!os) throw ts::data_error("eval: cannot write " + e_out);
        os << ts::report_to_json(report).dump(2) << "\n";
        std::printf("report written to %s\n", e_out.c_str());
        return 0;
    }

    if (segment->parsed()) {
        auto lm = ts::load_checkpoint(s_ckpt);
        ts::FrameClip video = ts::load_clip(s_video, s_fps);
        auto model = lm.model;
        std::size_t K = lm.model_config.num_classes;
        ts::WindowClassifier classify = [&](const ts::Tensor<float>& x) {
            ts::NoGradGuard ng;
            auto x5 = ts::reshape(x, {1, x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]});
            auto logits = model->forward(x5);
            auto p = ts::nn::softmax_rows(logits.data(), 1, K);
            auto it = std::max_element(p.begin(), p.end());
            return std::make_pair(static_cast<std::size_t>(it - p.begin()), static_cast<double>(*it));
        };
        auto timeline = ts::segment_clip(video, lm.transform_config, scfg, classify);

        // Only the four trained classes can appear; untrained phases in the
        // footage will be absorbed into the nearest trained label.
        std::ofstream js(s_out + ".json");
        if (!js) throw ts::data_error("segment: cannot write " + s_out + ".json");
        js << ts::timeline_to_json(timeline).dump(2) << "\n";
        std::ofstream cs(s_out + ".csv");
        if (!cs) throw ts::data_error("segment: cannot write " + s_out + ".csv");
        cs << ts::timeline_to_csv(timeline);
        for (const auto& sgm : timeline.segments)
            std::printf("%9.3f %9.3f  %-28s %.3f\n", sgm.start_seconds, sgm.end_seconds,
                        sgm.label.c_str(), sgm.mean_confidence);
        std::printf("timeline written to %s.json / %s.csv\n", s_out.c_str(), s_out.c_str());
        return 0;
    }

    if (stats->parsed()) return cmd_stats(st_manifest, st_bin, st_out);

    if (synthgen->parsed()) {
        g_spec.seed = seed;
        if (!g_script.empty()) {
            auto script = ts::synth::load_script(g_script);
            auto [clip, truth] = ts::synth::generate_long_video(script, g_spec, seed);
            ts::rvf::write(g_out, clip);
            nlohmann::json tj = nlohmann::json::array();
            for (const auto& seg : truth)
                tj.push_back({{"start_frame", seg.start_frame},
                              {"end_frame", seg.end_frame},
                              {"class", seg.label},
                              {"start_s", seg.start_frame / clip.fps},
                              {"end_s", seg.end_frame / clip.fps}});
            std::string truth_path = g_truth.empty() ? g_out + ".truth.json" : g_truth;
            std::ofstream os(truth_path);
            if (!os) throw ts::data_error("synthgen: cannot write " + truth_path);
            os << tj.dump(2) << "\n";
            std::printf("video: %s (%zu frames)\nground truth: %s\n", g_out.c_str(), clip.frames,
                        truth_path.c_str());
        } else {
            std::string manifest = ts::synth::generate_dataset(g_per_class, g_spec, seed, g_out);
            std::printf("manifest: %s\n", manifest.c_str());
            for (const auto& e : ts::load_manifest(manifest)) {
                auto h = ts::rvf::probe(ts::resolve_clip_path(manifest, e.clip_path));
                std::uint64_t sum = ts::ckpt::fnv1a(e.clip_path) ^ (h.frame_count * 1000003ull);
                auto clip = ts::rvf::read(ts::resolve_clip_path(manifest, e.clip_path));
                std::uint64_t pix = 0xcbf29ce484222325ull;
                for (std::uint8_t b : clip.data) {
                    pix ^= b;
                    pix *= 0x100000001b3ull;
                }
                std::printf("%-32s %6zu frames  checksum %016llx\n", e.clip_path.c_str(), clip.frames,
                            static_cast<unsigned long long>(pix ^ sum));
            }
        }
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const CLI::ParseError&) {
        return kExitUsage;
    } catch (const ts::numeric_error& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const ts::data_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
}
