#include <CLI11.hpp>

#include <algorithm>
#include <iostream>

#include "medart/app.hpp"
#include "medart/log.hpp"

#ifndef MEDART_VERSION
#define MEDART_VERSION "0.0.0"
#endif
#ifndef MEDART_GIT_REV
#define MEDART_GIT_REV "unknown"
#endif

namespace medart::app {

std::string version_string() { return std::string(MEDART_VERSION) + "+" + MEDART_GIT_REV; }

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["seed"] = seed;
    j["log_level"] = log_level;
    j["data_root"] = data_root;
    j["split_ratio"] = split_ratio;
    j["manifest"] = manifest;
    j["captions"] = captions;
    j["skip_bad_images"] = skip_bad_images;
    j["metadata"] = metadata;
    j["captions_out"] = captions_out;
    j["mock_vlm"] = mock_vlm;
    j["simple_caption"] = simple_caption;
    j["vlm_url"] = vlm_url;
    j["vlm_model"] = vlm_model;
    j["vlm_auth_env"] = vlm_auth_env;
    j["vlm_timeout_s"] = vlm_timeout_s;
    j["parallelism"] = parallelism;
    j["retries"] = retries;
    j["backoff_ms"] = backoff_ms;
    j["max_tokens"] = max_tokens;
    j["min_simplified_tokens"] = min_simplified_tokens;
    j["train_only"] = train_only;
    j["tokenizer"] = tokenizer;
    nlohmann::ordered_json d;
    medart::to_json(d, dit);
    j["dit"] = d;
    j["beta_start"] = beta_start;
    j["beta_end"] = beta_end;
    j["base_model"] = base_model;
    j["rank"] = rank;
    j["lora_scale"] = lora_scale;
    j["no_text_lora"] = no_text_lora;
    j["full_finetune"] = full_finetune;
    j["run_dir"] = run_dir;
    j["interval"] = interval;
    j["no_hldf"] = no_hldf;
    j["sampler_steps"] = sampler_steps;
    j["guidance"] = guidance;
    j["spacing"] = spacing;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["grad_clip"] = grad_clip;
    j["epochs"] = epochs;
    j["batch"] = batch;
    j["max_steps"] = max_steps;
    j["caption_dropout"] = caption_dropout;
    j["checkpoint_every"] = checkpoint_every;
    j["grad_steps"] = grad_steps;
    j["checkpoint_segment"] = checkpoint_segment;
    j["model"] = model;
    j["adapters"] = adapters;
    j["prompts"] = prompts;
    j["prompts_file"] = prompts_file;
    j["prompts_from_manifest"] = prompts_from_manifest;
    j["out_dir"] = out_dir;
    j["per_prompt"] = per_prompt;
    j["real"] = real;
    j["gen"] = gen;
    j["extractor"] = extractor;
    j["eval_size"] = eval_size;
    j["kid_subsets"] = kid_subsets;
    j["kid_subset_size"] = kid_subset_size;
    j["report"] = report;
    j["golden"] = golden;
    j["golden_tol"] = golden_tol;
    j["series"] = series;
    j["plot"] = plot;
    j["features_out"] = features_out;
    return j;
}

namespace {

void bind(CLI::App& app, RunConfig& c) {
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "key = value config file; flags given on the command line win");
    app.allow_config_extras(CLI::config_extras_mode::error);

    app.add_option("--seed", c.seed, "master seed");
    app.add_option("--log-level", c.log_level)->check(CLI::IsMember({"debug", "info", "warn", "error"}));

    app.add_option("--data-root", c.data_root, "directory with one subdirectory of PNGs per category");
    app.add_option("--split-ratio", c.split_ratio)->check(CLI::Range(0.0, 1.0));
    app.add_option("--manifest", c.manifest, "dataset manifest (JSONL)");
    app.add_option("--captions", c.captions, "caption manifest joined into the dataset manifest");
    app.add_flag("--skip-bad-images", c.skip_bad_images);

    app.add_option("--metadata", c.metadata, "JSON with modality and per-category visual features");
    app.add_option("--captions-out", c.captions_out);
    app.add_flag("--mock-vlm", c.mock_vlm, "offline deterministic captioner");
    app.add_flag("--simple-caption", c.simple_caption, "template captions only, no endpoint calls");
    app.add_option("--vlm-url", c.vlm_url);
    app.add_option("--vlm-model", c.vlm_model);
    app.add_option("--vlm-auth-env", c.vlm_auth_env, "environment variable holding a bearer token");
    app.add_option("--vlm-timeout", c.vlm_timeout_s);
    app.add_option("--parallelism", c.parallelism)->check(CLI::PositiveNumber);
    app.add_option("--retries", c.retries)->check(CLI::PositiveNumber);
    app.add_option("--backoff-ms", c.backoff_ms)->check(CLI::NonNegativeNumber);
    app.add_option("--max-tokens", c.max_tokens)->check(CLI::PositiveNumber);
    app.add_option("--min-simplified-tokens", c.min_simplified_tokens)->check(CLI::PositiveNumber);
    app.add_flag("--train-only", c.train_only, "caption only the train split");
    app.add_option("--tokenizer", c.tokenizer);

    app.add_option("--image-size", c.dit.latent_size, "training/sampling resolution");
    app.add_option("--patch-size", c.dit.patch_size);
    app.add_option("--hidden-dim", c.dit.hidden_dim);
    app.add_option("--depth", c.dit.depth);
    app.add_option("--heads", c.dit.heads);
    app.add_option("--cond-dim", c.dit.cond_dim);
    app.add_option("--cond-max-tokens", c.dit.cond_max_tokens);
    app.add_option("--text-layers", c.dit.text_layers);
    app.add_option("--text-heads", c.dit.text_heads);
    app.add_option("--vocab-size", c.dit.vocab_size);
    app.add_option("--ffn-mult", c.dit.ffn_mult);
    app.add_option("--timesteps", c.dit.timesteps);
    app.add_option("--beta-start", c.beta_start);
    app.add_option("--beta-end", c.beta_end);
    app.add_option("--base-model", c.base_model, "checkpoint to fine-tune instead of a fresh model");

    app.add_option("--rank", c.rank)->check(CLI::PositiveNumber);
    app.add_option("--lora-scale", c.lora_scale);
    app.add_flag("--no-text-lora", c.no_text_lora, "adapters on the denoiser only");
    app.add_flag("--full-finetune", c.full_finetune, "train all base weights (pretraining), no adapters");

    app.add_option("--run-dir", c.run_dir);
    app.add_option("--interval", c.interval, "color term every N steps")->check(CLI::PositiveNumber);
    app.add_flag("--no-hldf", c.no_hldf, "never evaluate the color term");
    app.add_option("--sampler-steps", c.sampler_steps)->check(CLI::PositiveNumber);
    app.add_option("--guidance", c.guidance)->check(CLI::NonNegativeNumber);
    app.add_option("--spacing", c.spacing)->check(CLI::IsMember({"time", "lambda"}));
    app.add_option("--lr", c.lr);
    app.add_option("--weight-decay", c.weight_decay);
    app.add_option("--grad-clip", c.grad_clip);
    app.add_option("--epochs", c.epochs)->check(CLI::PositiveNumber);
    app.add_option("--batch", c.batch)->check(CLI::PositiveNumber);
    app.add_option("--max-steps", c.max_steps)->check(CLI::NonNegativeNumber);
    app.add_option("--caption-dropout", c.caption_dropout)->check(CLI::Range(0.0, 1.0));
    app.add_option("--checkpoint-every", c.checkpoint_every)->check(CLI::NonNegativeNumber);
    app.add_option("--grad-steps", c.grad_steps)->check(CLI::NonNegativeNumber);
    app.add_option("--checkpoint-segment", c.checkpoint_segment);

    app.add_option("--model", c.model);
    app.add_option("--adapters", c.adapters);
    app.add_option("--prompt", c.prompts, "prompt (repeatable)");
    app.add_option("--prompts-file", c.prompts_file, "one prompt per line");
    app.add_flag("--prompts-from-manifest", c.prompts_from_manifest, "test-split captions of --manifest");
    app.add_option("--out-dir", c.out_dir);
    app.add_option("--per-prompt", c.per_prompt)->check(CLI::PositiveNumber);

    app.add_option("--real", c.real, "image directory or feature file");
    app.add_option("--gen", c.gen, "image directory or feature file");
    app.add_option("--extractor", c.extractor, "channel-stats | tiny-cnn | cnn:<archive>");
    app.add_option("--eval-size", c.eval_size)->check(CLI::PositiveNumber);
    app.add_option("--kid-subsets", c.kid_subsets)->check(CLI::PositiveNumber);
    app.add_option("--kid-subset-size", c.kid_subset_size);
    app.add_option("--report", c.report);
    app.add_option("--golden", c.golden, "reference report; mismatch beyond --golden-tol exits 4");
    app.add_option("--golden-tol", c.golden_tol);
    app.add_option("--series", c.series, "JSONL with a step field to plot");
    app.add_option("--plot", c.plot, "PNG output for --series or the loss curves");
    app.add_option("--features-out", c.features_out, "directory for extracted feature files");
}

LogLevel parse_level(const std::string& s) {
    if (s == "debug") return LogLevel::Debug;
    if (s == "warn") return LogLevel::Warn;
    if (s == "error") return LogLevel::Error;
    return LogLevel::Info;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    RunConfig cfg;
    CLI::App app{"Medical text-to-image fine-tuning toolkit", "medart"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);
    bind(app, cfg);
    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const RunConfig&);
    };
    const Sub subs[] = {
        {"split", "scan a dataset root and write the train/test manifest", cmd_split},
        {"caption", "caption manifest images through the VLM pipeline", cmd_caption},
        {"train", "fine-tune adapters with the hybrid diffusion/color objective", cmd_train},
        {"sample", "generate images from prompts", cmd_sample},
        {"evaluate", "Frechet distance and KID between two image or feature sets", cmd_evaluate},
        {"report", "summarize and plot a run's step log", cmd_report},
    };
    for (const auto& s : subs) app.add_subcommand(s.name, s.help)->fallthrough();

    std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(rev.begin(), rev.end());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }
    set_log_level(parse_level(cfg.log_level));
    for (const auto& s : subs) {
        if (!app.got_subcommand(s.name)) continue;
        cfg.command = s.name;
        cfg.resolved_config = app.config_to_str(true, false);
        try {
            return s.fn(cfg);
        } catch (const std::exception& e) {
            std::cerr << "medart " << s.name << ": error: " << e.what() << "\n";
            return kError;
        }
    }
    return kUsage;
}

}  // namespace medart::app
