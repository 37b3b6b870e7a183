// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "timestudy/dataset.hpp"
#include "timestudy/metrics.hpp"
#include "timestudy/resnet3d.hpp"
#include "timestudy/video.hpp"

namespace ts {

struct TrainConfig {
    double learning_rate = 0.001;
    std::size_t batch_size = 8;
    std::size_t max_epochs = 200;
    double clip_seconds = 4.0;
    std::uint64_t seed = 0;
    std::string checkpoint_dir = ".";
    std::string log_path;  // empty = no log file

    void validate() const {
        if (learning_rate < 0) throw std::invalid_argument("train: learning_rate must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
    std::size_t step_count = 0;
    std::vector<std::vector<T>> m, v;  // aligned with the parameter list

    template <typename Params>
    void init(const Params& params) {
        m.clear();
        v.clear();
        for (const auto& [name, p] : params) {
            m.emplace_back(p.numel(), T(0));
            v.emplace_back(p.numel(), T(0));
        }
    }
};

template <typename T>
void adam_step(std::vector<std::pair<std::string, Tensor<T>>>& params, AdamState<T>& st, T lr) {
    if (st.m.size() != params.size()) st.init(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].second;
        if (!p.grad().empty() && p.grad().size() != p.numel())
            throw std::invalid_argument("adam: grad shape mismatch for " + params[i].first);
        for (const T& g : p.grad())
            if (!std::isfinite(g)) throw numeric_error("adam: non-finite gradient in " + params[i].first);
    }
    st.step_count += 1;
    T bc1 = T(1) - std::pow(st.beta1, static_cast<T>(st.step_count));
    T bc2 = T(1) - std::pow(st.beta2, static_cast<T>(st.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].second;
        auto& m = st.m[i];
        auto& v = st.v[i];
        const bool has_grad = !p.grad().empty();
        for (std::size_t j = 0; j < p.numel(); ++j) {
            T g = has_grad ? p.grad()[j] : T(0);
            m[j] = st.beta1 * m[j] + (T(1) - st.beta1) * g;
            v[j] = st.beta2 * v[j] + (T(1) - st.beta2) * g * g;
            p.data()[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + st.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Epoch records
// ---------------------------------------------------------------------------

struct EpochMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
    double precision_macro = 0.0;
    double recall_macro = 0.0;
    double f1_macro = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    EpochMetrics train, val;
};

inline nlohmann::json epoch_metrics_json(const EpochMetrics& m) {
    return {{"loss", m.loss},
            {"accuracy", m.accuracy},
            {"precision_macro", m.precision_macro},
            {"recall_macro", m.recall_macro},
            {"f1_macro", m.f1_macro}};
}

// ---------------------------------------------------------------------------
// Checkpoints: "TLCK", u32 version, u64 config digest, u32 json length,
// config JSON, u32 record count, then named tensor records
// (u32 name length, name bytes, u32 rank, u64 extents, f32 LE data).
// ---------------------------------------------------------------------------

namespace ckpt {

constexpr char kMagic[4] = {'T', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

struct Record {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;
};

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline std::uint32_t read_u32(std::istream& is, const std::string& path) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw data_error("checkpoint: truncated file " + path);
    return v;
}
inline std::uint64_t read_u64(std::istream& is, const std::string& path) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw data_error("checkpoint: truncated file " + path);
    return v;
}

inline void save(const std::string& path, const std::string& config_json,
                 const std::vector<Record>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u64(os, fnv1a(config_json));
    write_u32(os, static_cast<std::uint32_t>(config_json.size()));
    os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    write_u32(os, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        write_u32(os, static_cast<std::uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        write_u32(os, static_cast<std::uint32_t>(r.shape.size()));
        for (auto e : r.shape) write_u64(os, e);
        os.write(reinterpret_cast<const char*>(r.data.data()),
                 static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    }
    if (!os) throw data_error("checkpoint: write failed: " + path);
}

struct File {
    std::string config_json;
    std::vector<Record> records;

    const Record& find(const std::string& name) const {
        for (const auto& r : records)
            if (r.name == name) return r;
        throw data_error("checkpoint: missing record " + name);
    }
    const Record* find_opt(const std::string& name) const {
        for (const auto& r : records)
            if (r.name == name) return &r;
        return nullptr;
    }
};

inline File load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw data_error("checkpoint: bad magic in " + path);
    std::uint32_t version = read_u32(is, path);
    if (version != kVersion)
        throw data_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    std::uint64_t digest = read_u64(is, path);
    std::uint32_t json_len = read_u32(is, path);
    File f;
    f.config_json.resize(json_len);
    is.read(f.config_json.data(), json_len);
    if (!is) throw data_error("checkpoint: truncated file " + path);
    if (fnv1a(f.config_json) != digest) throw data_error("checkpoint: config digest mismatch in " + path);
    std::uint32_t count = read_u32(is, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        Record r;
        std::uint32_t name_len = read_u32(is, path);
        r.name.resize(name_len);
        is.read(r.name.data(), name_len);
        std::uint32_t rank = read_u32(is, path);
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            r.shape.push_back(static_cast<std::size_t>(read_u64(is, path)));
            n *= r.shape.back();
        }
        r.data.resize(n);
        is.read(reinterpret_cast<char*>(r.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw data_error("checkpoint: truncated file " + path);
        f.records.push_back(std::move(r));
    }
    return f;
}

}  // namespace ckpt

// Config <-> JSON (stored inside checkpoints so eval/segment can rebuild).
inline nlohmann::json model_config_json(const ResNetConfig& c) {
    return {{"input_channels", c.input_channels},
            {"model_depth", c.model_depth},
            {"num_classes", c.num_classes},
            {"stem_out_channels", c.stem_out_channels},
            {"bottleneck_mid_channels", c.bottleneck_mid_channels},
            {"stage_spatial_strides", c.stage_spatial_strides},
            {"stage_temporal_strides", c.stage_temporal_strides}};
}

inline ResNetConfig model_config_from_json(const nlohmann::json& j) {
    ResNetConfig c;
    c.input_channels = j.at("input_channels");
    c.model_depth = j.at("model_depth");
    c.num_classes = j.at("num_classes");
    c.stem_out_channels = j.at("stem_out_channels");
    for (std::size_t i = 0; i < 4; ++i) {
        c.bottleneck_mid_channels[i] = j.at("bottleneck_mid_channels")[i];
        c.stage_spatial_strides[i] = j.at("stage_spatial_strides")[i];
        c.stage_temporal_strides[i] = j.at("stage_temporal_strides")[i];
    }
    return c;
}

inline nlohmann::json transform_config_json(const TransformConfig& c) {
    return {{"num_frames", c.num_frames},
            {"train_scale_min", c.train_scale_min},
            {"train_scale_max", c.train_scale_max},
            {"crop_size", c.crop_size},
            {"hflip_probability", c.hflip_probability},
            {"val_scale", c.val_scale},
            {"mean", c.mean},
            {"stddev", c.stddev}};
}

inline TransformConfig transform_config_from_json(const nlohmann::json& j) {
    TransformConfig c;
    c.num_frames = j.at("num_frames");
    c.train_scale_min = j.at("train_scale_min");
    c.train_scale_max = j.at("train_scale_max");
    c.crop_size = j.at("crop_size");
    c.hflip_probability = j.at("hflip_probability");
    c.val_scale = j.at("val_scale");
    for (std::size_t i = 0; i < 3; ++i) {
        c.mean[i] = j.at("mean")[i];
        c.stddev[i] = j.at("stddev")[i];
    }
    return c;
}

template <typename Model>
std::vector<ckpt::Record> snapshot_records(Model& model, AdamState<float>* adam = nullptr) {
    std::vector<ckpt::Record> records;
    auto params = model.parameters();
    for (auto& [name, p] : params) records.push_back({"param." + name, p.shape(), p.data()});
    for (auto& [name, buf] : model.buffers()) records.push_back({"buffer." + name, {buf->size()}, *buf});
    if (adam) {
        // the optimizer state is created lazily on the first step; a model
        // saved before any step still needs aligned (zero) moment vectors
        if (adam->m.size() != params.size()) adam->init(params);
        records.push_back({"adam.t", {1}, {static_cast<float>(adam->step_count)}});
        records.push_back({"adam.hyper", {3}, {adam->beta1, adam->beta2, adam->eps}});
        for (std::size_t i = 0; i < params.size(); ++i) {
            records.push_back({"adam.m." + params[i].first, params[i].second.shape(), adam->m[i]});
            records.push_back({"adam.v." + params[i].first, params[i].second.shape(), adam->v[i]});
        }
    }
    return records;
}

// Restores parameters and running stats; throws a shape error naming the
// offending tensor on any disagreement with the current model.
template <typename Model>
void restore_into(Model& model, const ckpt::File& file, AdamState<float>* adam = nullptr) {
    auto params = model.parameters();
    for (auto& [name, p] : params) {
        const auto& r = file.find("param." + name);
        if (r.shape != p.shape())
            throw data_error("checkpoint: shape mismatch for " + name + ": file " + shape_str(r.shape) +
                             " vs model " + shape_str(p.shape()));
        p.data() = r.data;
        p.zero_grad();
    }
    for (auto& [name, buf] : model.buffers()) {
        const auto& r = file.find("buffer." + name);
        if (r.data.size() != buf->size())
            throw data_error("checkpoint: shape mismatch for buffer " + name);
        *buf = r.data;
    }
    if (adam) {
        adam->init(params);
        adam->step_count = static_cast<std::size_t>(file.find("adam.t").data[0]);
        const auto& hyper = file.find("adam.hyper").data;
        adam->beta1 = hyper[0];
        adam->beta2 = hyper[1];
        adam->eps = hyper[2];
        for (std::size_t i = 0; i < params.size(); ++i) {
            adam->m[i] = file.find("adam.m." + params[i].first).data;
            adam->v[i] = file.find("adam.v." + params[i].first).data;
        }
    }
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

inline std::string resolve_clip_path(const std::string& manifest_path, const std::string& clip_path) {
    namespace fs = std::filesystem;
    fs::path p(clip_path);
    if (p.is_absolute()) return clip_path;
    return (fs::path(manifest_path).parent_path() / p).string();
}

// Decoded clips cached whole; desk-scale datasets fit in memory.
class ClipCache {
public:
    explicit ClipCache(std::string manifest_path) : manifest_path_(std::move(manifest_path)) {}

    const FrameClip& get(const ManifestEntry& e) {
        auto it = cache_.find(e.clip_path);
        if (it != cache_.end()) return it->second;
        FrameClip clip = load_clip(resolve_clip_path(manifest_path_, e.clip_path), e.fps);
        return cache_.emplace(e.clip_path, std::move(clip)).first->second;
    }

private:
    std::string manifest_path_;
    std::map<std::string, FrameClip> cache_;
};

inline FrameClip slice_frames(const FrameClip& clip, std::size_t start, std::size_t len) {
    FrameClip out;
    out.width = clip.width;
    out.height = clip.height;
    out.fps = clip.fps;
    out.source_id = clip.source_id;
    out.frames = len;
    out.data.assign(clip.data.begin() + static_cast<std::ptrdiff_t>(start * clip.frame_bytes()),
                    clip.data.begin() + static_cast<std::ptrdiff_t>((start + len) * clip.frame_bytes()));
    return out;
}

template <typename Model>
class Trainer {
public:
    Trainer(Model& model, std::vector<ManifestEntry> entries, std::string manifest_path,
            TrainConfig cfg, TransformConfig tcfg)
        : model_(model), cfg_(std::move(cfg)), tcfg_(tcfg), cache_(manifest_path) {
        cfg_.validate();
        for (auto& e : filter_active(entries))
            (e.split == "train" ? train_ : val_).push_back(e);
    }

    const std::vector<ManifestEntry>& train_entries() const { return train_; }
    const std::vector<ManifestEntry>& val_entries() const { return val_; }
    AdamState<float>& optimizer() { return adam_; }

    // One shuffled pass: forward, loss, backward, Adam step, zero grads.
    EpochMetrics train_epoch(Rng& rng) {
        if (train_.empty()) throw data_error("train_epoch: empty training split");
        model_.set_training(true);
        auto params = model_.parameters();
        if (adam_.m.size() != params.size()) adam_.init(params);

        ConfusionMatrix cm(ClassVocabulary::active().size());
        double loss_sum = 0.0;
        std::size_t n_total = 0;

        auto batches = make_batches(train_.size(), cfg_.batch_size, &rng);
        for (const auto& batch : batches) {
            std::vector<std::size_t> targets;
            std::vector<Tensor<float>> inputs(batch.size());
            std::vector<std::uint64_t> seeds(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) seeds[i] = rng.next_u32();
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const auto& e = train_[batch[i]];
                Rng crng(seeds[i]);
                auto win = sample_clip_window(e, cfg_.clip_seconds, /*random=*/true, &crng);
                FrameClip clip = slice_frames(cache_.get(e), win.start, win.length);
                inputs[i] = train_transform(clip, tcfg_, crng);
                targets.push_back(ClassVocabulary::active_index(e.label));
            }
            Tensor<float> x = stack_batch(inputs);
            Tensor<float> logits = model_.forward(x);
            Tensor<float> loss = nn::softmax_cross_entropy(logits, targets);
            if (!std::isfinite(loss.item())) throw numeric_error("train_epoch: non-finite loss");
            backward(loss);
            if (cfg_.learning_rate > 0) adam_step(params, adam_, static_cast<float>(cfg_.learning_rate));
            for (auto& [name, p] : params) p.zero_grad();

            accumulate_preds(cm, logits, targets);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
            n_total += batch.size();
        }
        return finish(cm, loss_sum / static_cast<double>(n_total));
    }

    // Eval-mode pass over the validation split; no parameter mutation.
    EpochMetrics evaluate() { return evaluate_entries(val_); }

    EpochMetrics evaluate_entries(const std::vector<ManifestEntry>& entries) {
        if (entries.empty()) throw data_error("evaluate: empty split");
        model_.set_training(false);
        NoGradGuard ng;
        ConfusionMatrix cm(ClassVocabulary::active().size());
        double loss_sum = 0.0;
        auto batches = make_batches(entries.size(), cfg_.batch_size);
        for (const auto& batch : batches) {
            std::vector<std::size_t> targets;
            std::vector<Tensor<float>> inputs(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const auto& e = entries[batch[i]];
                auto win = sample_clip_window(e, cfg_.clip_seconds, /*random=*/false);
                FrameClip clip = slice_frames(cache_.get(e), win.start, win.length);
                inputs[i] = val_transform(clip, tcfg_);
                targets.push_back(ClassVocabulary::active_index(e.label));
            }
            Tensor<float> x = stack_batch(inputs);
            Tensor<float> logits = model_.forward(x);
            Tensor<float> loss = nn::softmax_cross_entropy(logits, targets);
            accumulate_preds(cm, logits, targets);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
        }
        model_.set_training(true);
        return finish(cm, loss_sum / static_cast<double>(entries.size()));
    }

    // Alternates train/evaluate; checkpoints when validation macro F1
    // improves; appends one JSON line per epoch to the log.
    std::vector<EpochRecord> fit(std::string* best_checkpoint_out = nullptr,
                                 bool print_progress = false) {
        namespace fs = std::filesystem;
        fs::create_directories(cfg_.checkpoint_dir);
        std::ofstream log;
        if (!cfg_.log_path.empty()) {
            log.open(cfg_.log_path, std::ios::app);
            if (!log) throw data_error("fit: cannot open log " + cfg_.log_path);
        }

        Rng rng(cfg_.seed);
        std::vector<EpochRecord> records;
        double best_f1 = -1.0;
        std::string best_path = (fs::path(cfg_.checkpoint_dir) / "best.ckpt").string();
        for (std::size_t epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
            EpochRecord rec;
            rec.epoch = epoch;
            rec.train = train_epoch(rng);
            rec.val = evaluate();
            records.push_back(rec);
            if (log) {
                nlohmann::json j{{"epoch", epoch},
                                 {"train", epoch_metrics_json(rec.train)},
                                 {"val", epoch_metrics_json(rec.val)}};
                log << j.dump() << "\n";
                log.flush();
            }
            if (print_progress) {
                std::printf("epoch %3zu | train loss %.4f acc %.3f f1 %.3f | val loss %.4f acc %.3f f1 %.3f\n",
                            epoch, rec.train.loss, rec.train.accuracy, rec.train.f1_macro, rec.val.loss,
                            rec.val.accuracy, rec.val.f1_macro);
                std::fflush(stdout);
            }
            if (rec.val.f1_macro > best_f1) {
                best_f1 = rec.val.f1_macro;
                save_checkpoint(best_path);
            }
        }
        if (best_checkpoint_out) *best_checkpoint_out = best_path;
        return records;
    }

    void save_checkpoint(const std::string& path) {
        nlohmann::json cfg{{"model", model_config_json(model_.config())},
                           {"transform", transform_config_json(tcfg_)}};
        ckpt::save(path, cfg.dump(), snapshot_records(model_, &adam_));
    }

    const TransformConfig& transform_config() const { return tcfg_; }

private:
    static Tensor<float> stack_batch(const std::vector<Tensor<float>>& inputs) {
        const auto& s = inputs[0].shape();  // [3, F, S, S]
        std::vector<std::size_t> shape{inputs.size(), s[0], s[1], s[2], s[3]};
        auto out = Tensor<float>::zeros(shape);
        std::size_t per = inputs[0].numel();
        for (std::size_t i = 0; i < inputs.size(); ++i)
            std::copy(inputs[i].data().begin(), inputs[i].data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
        return out;
    }

    static void accumulate_preds(ConfusionMatrix& cm, const Tensor<float>& logits,
                                 const std::vector<std::size_t>& targets) {
        std::size_t K = logits.shape()[1];
        std::vector<std::size_t> preds;
        for (std::size_t n = 0; n < targets.size(); ++n) {
            const float* row = logits.data().data() + n * K;
            preds.push_back(static_cast<std::size_t>(std::max_element(row, row + K) - row));
        }
        cm.accumulate(targets, preds);
    }

    static EpochMetrics finish(const ConfusionMatrix& cm, double mean_loss) {
        EpochMetrics m;
        m.loss = mean_loss;
        m.accuracy = accuracy(cm);
        m.precision_macro = macro_precision(cm);
        m.recall_macro = macro_recall(cm);
        m.f1_macro = macro_f1(cm);
        return m;
    }

    Model& model_;
    TrainConfig cfg_;
    TransformConfig tcfg_;
    ClipCache cache_;
    std::vector<ManifestEntry> train_, val_;
    AdamState<float> adam_;
};

// Rebuild model + configs from a checkpoint file.
struct LoadedModel {
    ResNetConfig model_config;
    TransformConfig transform_config;
    std::shared_ptr<ResNet3d<float>> model;
};

inline LoadedModel load_checkpoint(const std::string& path) {
    auto file = ckpt::load(path);
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(file.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("checkpoint: bad config JSON: ") + e.what());
    }
    LoadedModel lm;
    lm.model_config = model_config_from_json(cfg.at("model"));
    lm.transform_config = transform_config_from_json(cfg.at("transform"));
    lm.model = std::make_shared<ResNet3d<float>>(lm.model_config, /*seed=*/0);
    restore_into(*lm.model, file);
    lm.model->set_training(false);
    return lm;
}

}  // namespace ts
