#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "medart/denoiser.hpp"

namespace medart::app {

enum ExitCode : int {
    kOk = 0,
    kError = 1,
    kUsage = 2,
    kPartialFailure = 3,
    kGoldenMismatch = 4,
};

/// Every tunable of every subcommand. Options are flat (no sections), so one
/// config file can drive the whole pipeline; command-line flags override it.
struct RunConfig {
    std::string command;
    uint64_t seed = 0;
    std::string log_level = "info";

    // dataset
    std::string data_root;
    double split_ratio = 0.8;
    std::string manifest = "manifest.jsonl";
    std::string captions;  // caption manifest joined into the dataset manifest
    bool skip_bad_images = false;

    // captioning
    std::string metadata;
    std::string captions_out = "captions.jsonl";
    bool mock_vlm = false;
    bool simple_caption = false;
    std::string vlm_url = "http://127.0.0.1:8080/generate";
    std::string vlm_model = "llava-next";
    std::string vlm_auth_env;
    double vlm_timeout_s = 60.0;
    int parallelism = 4;
    int retries = 3;
    double backoff_ms = 200.0;
    int max_tokens = 120;
    int min_simplified_tokens = 90;
    bool train_only = false;
    std::string tokenizer = "word-punct-v1";

    // model and schedule
    DitConfig dit;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string base_model;  // start from this checkpoint instead of a fresh init

    // adapters
    int rank = 8;
    double lora_scale = 1.0;
    bool no_text_lora = false;
    bool full_finetune = false;  // train every base parameter, no adapters

    // training
    std::string run_dir = "runs/default";
    int64_t interval = 500;
    bool no_hldf = false;
    int sampler_steps = 20;
    double guidance = 4.5;
    std::string spacing = "time";
    double lr = 1e-4;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    int epochs = 1;
    int batch = 1;
    int64_t max_steps = 0;  // 0 = run every epoch to completion
    double caption_dropout = 0.1;
    int checkpoint_every = 1;  // epochs; 0 disables intermediate checkpoints
    int grad_steps = 0;
    int checkpoint_segment = -1;

    // sampling
    std::string model;     // defaults to <run_dir>/model.ckpt
    std::string adapters;  // defaults to <run_dir>/adapters.lora when present
    std::vector<std::string> prompts;
    std::string prompts_file;
    bool prompts_from_manifest = false;  // test-split captions of --manifest
    std::string out_dir = "samples";
    int per_prompt = 1;

    // evaluation
    std::string real;
    std::string gen;
    std::string extractor = "channel-stats";
    int eval_size = 32;
    int kid_subsets = 100;
    int64_t kid_subset_size = 0;
    std::string report = "report.json";
    std::string golden;
    double golden_tol = 1e-6;
    std::string series;
    std::string plot;
    std::string features_out;

    // Resolved key = value text of every option, filled by run_cli.
    std::string resolved_config;

    nlohmann::ordered_json to_json() const;
};

/// Parses args (args[0] is the program name) and runs the selected subcommand.
/// Exceptions are reported on stderr and mapped to kError.
int run_cli(const std::vector<std::string>& args);

int cmd_split(const RunConfig& cfg);
int cmd_caption(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_sample(const RunConfig& cfg);
int cmd_evaluate(const RunConfig& cfg);
int cmd_report(const RunConfig& cfg);

std::string version_string();

}  // namespace medart::app
