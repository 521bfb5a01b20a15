#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "medart/app.hpp"
#include "medart/dataset.hpp"
#include "medart/diffusion.hpp"
#include "medart/extractors.hpp"
#include "medart/hldf.hpp"
#include "medart/image_io.hpp"
#include "medart/log.hpp"
#include "medart/lora.hpp"
#include "medart/metrics.hpp"
#include "medart/plot.hpp"
#include "medart/sampler.hpp"
#include "medart/vsg.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace medart::app {

namespace {

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << text;
}

std::string read_text(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string hex16(uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

StepSpacing parse_spacing(const std::string& s) {
    if (s == "time") return StepSpacing::TimeUniform;
    if (s == "lambda") return StepSpacing::LambdaUniform;
    throw std::invalid_argument("unknown spacing '" + s + "'");
}

NoiseSchedule schedule_of(const RunConfig& c, int T) { return build_schedule(T, c.beta_start, c.beta_end); }

void write_run_stamp(const fs::path& dir, const RunConfig& c) {
    fs::create_directories(dir);
    write_text(dir / "config.json", c.to_json().dump(2) + "\n");
    if (!c.resolved_config.empty()) write_text(dir / "config.ini", c.resolved_config);
    ojson v;
    v["version"] = version_string();
    v["command"] = c.command;
    v["seed"] = c.seed;
    write_text(dir / "version.json", v.dump(2) + "\n");
}

DatasetManifest load_captioned_manifest(const RunConfig& c) {
    DatasetManifest m = DatasetManifest::read(c.manifest);
    if (!c.captions.empty()) {
        const auto recs = read_caption_manifest(c.captions);
        const size_t n = join_captions(m, caption_map(recs, static_cast<size_t>(c.max_tokens)));
        log_info("joined " + std::to_string(n) + " captions from " + c.captions);
    }
    return m;
}

}  // namespace

int cmd_split(const RunConfig& c) {
    if (c.data_root.empty()) throw std::invalid_argument("--data-root is required");
    const DatasetManifest m = scan_and_split(c.data_root, c.split_ratio, c.seed);
    ensure_parent(c.manifest);
    m.write(c.manifest);
    std::cout << "wrote " << m.records.size() << " records (" << m.indices(Split::Train).size() << " train, "
              << m.indices(Split::Test).size() << " test) to " << c.manifest << "\n";
    return kOk;
}

int cmd_caption(const RunConfig& c) {
    const DatasetManifest m = DatasetManifest::read(c.manifest);
    VsgMetadata meta;
    if (!c.metadata.empty()) {
        meta = VsgMetadata::read(c.metadata);
    } else if (c.simple_caption) {
        throw std::invalid_argument("--metadata is required (it names the modality)");
    } else {
        throw std::invalid_argument("--metadata is required");
    }
    const auto tok = make_tokenizer(c.tokenizer);
    PipelineConfig pc;
    pc.parallelism = c.parallelism;
    pc.retry.retries = c.retries;
    pc.retry.backoff_ms = c.backoff_ms;
    pc.budget.max_tokens = static_cast<size_t>(c.max_tokens);
    pc.budget.min_simplified = static_cast<size_t>(c.min_simplified_tokens);
    pc.budget.retries = c.retries;
    pc.simple_captions = c.simple_caption;
    pc.train_only = c.train_only;

    std::unique_ptr<VlmClient> client;
    if (!c.simple_caption) {
        if (c.mock_vlm) {
            client = std::make_unique<MockVlmClient>();
        } else {
            HttpVlmConfig hc;
            hc.url = c.vlm_url;
            hc.model = c.vlm_model;
            hc.auth_env = c.vlm_auth_env;
            hc.timeout_s = c.vlm_timeout_s;
            client = std::make_unique<HttpVlmClient>(hc);
        }
    }
    ensure_parent(c.captions_out);
    const PipelineResult r = run_caption_pipeline(m, meta, client.get(), *tok, pc, c.captions_out);
    std::cout << "captions: " << r.total << " selected, " << r.skipped << " already done, " << r.succeeded
              << " new, " << r.failed << " failed -> " << c.captions_out << "\n";
    return r.partial_failure() ? kPartialFailure : kOk;
}

int cmd_train(const RunConfig& c) {
    const fs::path run_dir(c.run_dir);
    DatasetManifest m = load_captioned_manifest(c);
    m.require_train_captions();

    const SeedStreams seeds(c.seed);
    std::optional<DenoiserModel> model;
    if (!c.base_model.empty()) {
        model.emplace(DenoiserModel::load(c.base_model));
    } else {
        Rng init = seeds.stream("init");
        model.emplace(c.dit, init);
    }
    const DitConfig& dc = model->config();
    const NoiseSchedule sched = schedule_of(c, dc.timesteps);

    HldfConfig hc;
    hc.N = c.no_hldf ? kNeverInterval : c.interval;
    hc.M = c.sampler_steps;
    hc.w = c.guidance;
    hc.lr = c.lr;
    hc.weight_decay = c.weight_decay;
    hc.grad_clip = c.grad_clip;
    hc.epochs = c.epochs;
    hc.batch = c.batch;
    hc.rank = c.rank;
    hc.lora_scale = c.lora_scale;
    hc.caption_dropout = c.caption_dropout;
    hc.checkpoint_segment = c.checkpoint_segment;
    hc.grad_steps = c.grad_steps;
    hc.spacing = parse_spacing(c.spacing);
    hc.validate();

    std::optional<LoraSet> adapters;
    if (!c.full_finetune) {
        Rng lora_init = seeds.stream("lora");
        adapters.emplace(attach(*model, model->default_lora_targets(true, !c.no_text_lora), c.rank, c.lora_scale,
                                lora_init));
        log_info("adapters: " + std::to_string(adapters->size()) + " layers, " +
                 std::to_string(adapters->parameter_count()) + " parameters");
    }

    write_run_stamp(run_dir, c);
    fs::create_directories(run_dir / "checkpoints");
    // The base the adapters were trained against, so the run directory is self-contained.
    if (!c.full_finetune) model->save((run_dir / "model.ckpt").string());

    AffineCodec codec;
    HldfTrainer trainer(*model, adapters ? &*adapters : nullptr, sched, hc, seeds, codec);
    std::ofstream log_os(run_dir / "metrics.jsonl", std::ios::trunc);
    if (!log_os) throw std::runtime_error("cannot write step log");

    LoadOptions lo;
    lo.target_size = dc.latent_size;
    lo.skip_bad = c.skip_bad_images;
    Rng shuffle = seeds.stream("shuffle");
    bool stop = false;
    for (int epoch = 1; epoch <= c.epochs && !stop; ++epoch) {
        BatchPrefetcher pf(m, epoch_batches(m, c.batch, shuffle), lo, 2);
        while (auto batch = pf.next()) {
            const StepRecord rec = trainer.step(*batch);
            ojson j;
            j["step"] = rec.step;
            j["epoch"] = epoch;
            j["L_diffusion"] = rec.l_diffusion;
            j["L_color"] = rec.l_color ? ojson(*rec.l_color) : ojson(nullptr);
            j["total"] = rec.total;
            j["wall_ms"] = rec.wall_ms;
            log_os << j.dump() << '\n';
            log_os.flush();
            if (c.max_steps > 0 && rec.step >= c.max_steps) {
                stop = true;
                break;
            }
        }
        if (c.checkpoint_every > 0 && epoch % c.checkpoint_every == 0 && epoch < c.epochs && !stop) {
            const fs::path ck = run_dir / "checkpoints" / ("epoch_" + std::to_string(epoch));
            if (adapters)
                save_adapters(ck.string() + ".lora", *adapters);
            else
                model->save(ck.string() + ".ckpt");
        }
    }
    if (adapters)
        save_adapters((run_dir / "adapters.lora").string(), *adapters);
    else
        model->save((run_dir / "model.ckpt").string());
    std::cout << "trained " << trainer.current_step() << " steps (" << trainer.color_evaluations()
              << " color evaluations) -> " << run_dir.string() << "\n";
    return kOk;
}

int cmd_sample(const RunConfig& c) {
    const fs::path run_dir(c.run_dir);
    const std::string model_path = c.model.empty() ? (run_dir / "model.ckpt").string() : c.model;
    if (!fs::exists(model_path)) throw std::runtime_error("checkpoint not found: " + model_path);
    const DenoiserModel model = DenoiserModel::load(model_path);
    std::string adapter_path = c.adapters;
    if (adapter_path.empty() && c.model.empty() && fs::exists(run_dir / "adapters.lora"))
        adapter_path = (run_dir / "adapters.lora").string();
    std::optional<LoraSet> adapters;
    if (!adapter_path.empty()) {
        if (!fs::exists(adapter_path)) throw std::runtime_error("adapters not found: " + adapter_path);
        adapters.emplace(load_adapters(adapter_path, model));
    }

    std::vector<std::string> prompts = c.prompts;
    if (!c.prompts_file.empty()) {
        std::istringstream is(read_text(c.prompts_file));
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) prompts.push_back(line);
        }
    }
    if (c.prompts_from_manifest) {
        const DatasetManifest m = load_captioned_manifest(c);
        for (size_t i : m.indices(Split::Test)) {
            if (!m.records[i].caption) throw std::runtime_error("test record without caption: " + m.records[i].image_path);
            prompts.push_back(*m.records[i].caption);
        }
    }
    if (prompts.empty()) throw std::invalid_argument("no prompts given");

    const DitConfig& dc = model.config();
    const NoiseSchedule sched = schedule_of(c, dc.timesteps);
    const SamplerConfig sc = make_sampler_config(sched, c.sampler_steps, c.guidance, parse_spacing(c.spacing));
    const EpsFn eps = model_eps_fn(model, adapters ? &*adapters : nullptr);
    const SeedStreams seeds(c.seed);
    AffineCodec codec;
    NoGradGuard ng;

    const fs::path out(c.out_dir);
    fs::create_directories(out);
    std::ofstream index(out / "samples.jsonl", std::ios::trunc);
    const TextEmbedding uncond = model.encode_text({""}, adapters ? &*adapters : nullptr);
    size_t written = 0;
    for (const auto& p : prompts) {
        const std::string h = hex16(fnv1a64(p));
        const TextEmbedding cond = model.encode_text({p}, adapters ? &*adapters : nullptr);
        for (int k = 0; k < c.per_prompt; ++k) {
            std::string name = "sample_" + h + "_s" + std::to_string(c.seed);
            if (c.per_prompt > 1) name += "_k" + std::to_string(k);
            name += ".png";
            Rng rng = seeds.stream("sampler/" + h + "/" + std::to_string(k));
            const Shape shp{1, dc.latent_channels, dc.latent_size, dc.latent_size};
            const Tensor zT = Tensor::from(shp, rng.normal_vec(static_cast<size_t>(shape_numel(shp))));
            const Tensor x = codec.decode(sample(eps, cond, uncond, sc, sched, zT));
            write_png((out / name).string(), tensor_to_image(x, 0));
            ojson j;
            j["file"] = name;
            j["prompt"] = p;
            j["seed"] = c.seed;
            j["index"] = k;
            index << j.dump() << '\n';
            ++written;
        }
    }
    std::cout << "wrote " << written << " images to " << out.string() << "\n";
    return kOk;
}

namespace {

bool is_feature_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) return false;
    std::ifstream is(p, std::ios::binary);
    char magic[8] = {};
    is.read(magic, 8);
    return is && std::string(magic, 8) == "MDFEAT01";
}

std::vector<std::string> list_pngs(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (ext == ".png") out.push_back(e.path().generic_string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

FeatureSet features_of(const std::string& src, const RunConfig& c, const FeatureExtractor*& ex,
                       std::unique_ptr<FeatureExtractor>& holder) {
    if (src.empty()) throw std::invalid_argument("--real and --gen are required");
    if (is_feature_file(src)) return read_feature_file(src);
    if (!fs::is_directory(src)) throw std::runtime_error("not an image directory or feature file: " + src);
    if (!ex) {
        holder = make_extractor(c.extractor);
        ex = holder.get();
    }
    const auto files = list_pngs(src);
    if (files.empty()) throw std::runtime_error("no PNG images under " + src);
    FeatureSet fs_out;
    fs_out.extractor_id = ex->id();
    fs_out.features.resize(static_cast<Eigen::Index>(files.size()), ex->dim());
    const size_t chunk = 64;
    for (size_t i = 0; i < files.size(); i += chunk) {
        const size_t n = std::min(chunk, files.size() - i);
        std::vector<double> px;
        for (size_t k = 0; k < n; ++k) append_chw(resize_bilinear(read_png(files[i + k]), c.eval_size, c.eval_size), px);
        const Tensor batch = Tensor::from({static_cast<int64_t>(n), 3, c.eval_size, c.eval_size}, std::move(px));
        fs_out.features.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = ex->features(batch);
    }
    return fs_out;
}

std::vector<ojson> read_jsonl(const fs::path& p) {
    std::vector<ojson> out;
    std::istringstream is(read_text(p));
    std::string line;
    while (std::getline(is, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(ojson::parse(line));
    return out;
}

/// One series per numeric field other than step/epoch/wall_ms.
std::vector<PlotSeries> series_from(const std::vector<ojson>& rows) {
    std::vector<PlotSeries> out;
    auto find = [&](const std::string& k) -> PlotSeries& {
        for (auto& s : out)
            if (s.name == k) return s;
        out.push_back({k, {}, {}});
        return out.back();
    };
    for (const auto& r : rows) {
        if (!r.contains("step")) throw std::runtime_error("series row without a step field");
        const double step = r["step"].get<double>();
        for (const auto& [k, v] : r.items()) {
            if (k == "step" || k == "epoch" || k == "wall_ms" || !(v.is_number() || v.is_null())) continue;
            auto& s = find(k);
            s.x.push_back(step);
            s.y.push_back(v.is_null() ? std::nan("") : v.get<double>());
        }
    }
    return out;
}

}  // namespace

int cmd_evaluate(const RunConfig& c) {
    const FeatureExtractor* ex = nullptr;
    std::unique_ptr<FeatureExtractor> holder;
    const FeatureSet real = features_of(c.real, c, ex, holder);
    const FeatureSet gen = features_of(c.gen, c, ex, holder);
    if (!c.features_out.empty()) {
        fs::create_directories(c.features_out);
        write_feature_file((fs::path(c.features_out) / "real.feat").string(), real);
        write_feature_file((fs::path(c.features_out) / "gen.feat").string(), gen);
    }
    const MetricReport rep = evaluate_features(real, gen, c.kid_subsets, c.kid_subset_size, c.seed);
    ensure_parent(c.report);
    write_text(c.report, rep.to_json().dump(2) + "\n");
    std::cout << rep.to_json().dump(2) << "\n";
    if (!c.series.empty()) {
        const std::string plot = c.plot.empty() ? (fs::path(c.report).replace_extension(".png")).string() : c.plot;
        write_line_plot(plot, series_from(read_jsonl(c.series)));
    }
    if (!c.golden.empty()) {
        const MetricReport g = MetricReport::from_json(nlohmann::json::parse(read_text(c.golden)));
        const double diff = report_max_abs_diff(rep, g);
        if (diff > c.golden_tol) {
            std::cerr << "report differs from golden by " << diff << " (tolerance " << c.golden_tol << ")\n";
            return kGoldenMismatch;
        }
        std::cout << "matches golden report within " << c.golden_tol << "\n";
    }
    return kOk;
}

int cmd_report(const RunConfig& c) {
    const fs::path run_dir(c.run_dir);
    const auto rows = read_jsonl(run_dir / "metrics.jsonl");
    if (rows.empty()) throw std::runtime_error("empty step log in " + run_dir.string());
    double wall = 0.0, color_sum = 0.0;
    int64_t color_n = 0;
    for (const auto& r : rows) {
        wall += r.value("wall_ms", 0.0);
        if (!r["L_color"].is_null()) {
            color_sum += r["L_color"].get<double>();
            ++color_n;
        }
    }
    ojson s;
    s["steps"] = rows.back()["step"];
    s["final_L_diffusion"] = rows.back()["L_diffusion"];
    s["final_total"] = rows.back()["total"];
    s["color_evaluations"] = color_n;
    s["mean_L_color"] = color_n ? ojson(color_sum / static_cast<double>(color_n)) : ojson(nullptr);
    s["wall_s"] = wall / 1000.0;
    write_text(run_dir / "summary.json", s.dump(2) + "\n");
    const std::string plot = c.plot.empty() ? (run_dir / "loss.png").string() : c.plot;
    write_line_plot(plot, series_from(rows));
    std::cout << s.dump(2) << "\n";
    return kOk;
}

}  // namespace medart::app
