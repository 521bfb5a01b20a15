#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "medart/dataset.hpp"
#include "medart/tokenizer.hpp"

namespace medart {

struct VsgRequest {
    std::string modality;
    std::string category;
    std::string visual_features;
    std::string image_b64;  // may be empty for clients that ignore the image
    std::string image_path;

    void validate() const;
};

/// "An" when the modality starts with a vowel, else "A".
std::string article_for(const std::string& modality);
std::string build_prompt(const VsgRequest& req);
std::string simple_caption(const std::string& modality, const std::string& category);
/// Hash of the prompt template, tokenizer id and budget; part of the resume key.
std::string template_hash(const std::string& tokenizer_id, size_t max_tokens);

enum class CaptionSource { Vlm, Simplified, SimpleTemplate };
std::string source_name(CaptionSource s);
CaptionSource parse_source(const std::string& s);

struct CaptionRecord {
    std::string image_path;
    std::string caption;
    int64_t token_count = 0;
    CaptionSource source = CaptionSource::Vlm;
    std::string category;
    std::string modality;
    std::string tokenizer_id;
    std::string template_hash;
    bool failed = false;
    std::string error;

    nlohmann::ordered_json to_json() const;
    static CaptionRecord from_json(const nlohmann::json& j);
};

struct VlmError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Text-generation endpoint. complete() throws VlmError on transport or
/// protocol failure; `image_b64` is empty for text-only requests.
class VlmClient {
public:
    virtual ~VlmClient() = default;
    virtual std::string complete(const std::string& prompt, const std::string& image_b64) = 0;
    virtual bool wants_image() const { return true; }
};

/// Deterministic offline client. The default responder answers caption
/// prompts with the template opening followed by the listed features and
/// answers "simplify: ..." by truncating to 100 tokens.
class MockVlmClient final : public VlmClient {
public:
    using Responder = std::function<std::string(const std::string& prompt)>;

    MockVlmClient();
    explicit MockVlmClient(Responder r);

    std::string complete(const std::string& prompt, const std::string& image_b64) override;
    bool wants_image() const override { return false; }

    /// Requests whose prompt contains `needle` throw VlmError.
    void fail_when_contains(std::string needle);
    int64_t calls() const { return calls_.load(); }
    int64_t caption_calls() const { return caption_calls_.load(); }
    int64_t simplify_calls() const { return simplify_calls_.load(); }

    static std::string default_response(const std::string& prompt);

private:
    Responder responder_;
    std::mutex mu_;
    std::vector<std::string> fail_needles_;
    std::atomic<int64_t> calls_{0}, caption_calls_{0}, simplify_calls_{0};
};

struct HttpVlmConfig {
    std::string url = "http://127.0.0.1:8080/generate";
    std::string model = "llava-next";
    std::string auth_env;  // name of the environment variable holding a bearer token
    double timeout_s = 60.0;
};

/// POSTs {"model", "prompt", "image"} as JSON and reads the reply text from
/// "text", "response" or "caption". Plain http only.
class HttpVlmClient final : public VlmClient {
public:
    explicit HttpVlmClient(HttpVlmConfig cfg);
    std::string complete(const std::string& prompt, const std::string& image_b64) override;

private:
    HttpVlmConfig cfg_;
    std::string host_, path_;
};

std::string base64_encode(const std::string& bytes);

struct RetryPolicy {
    int retries = 3;
    double backoff_ms = 200.0;  // doubles after each failed attempt
};

struct BudgetConfig {
    size_t max_tokens = 120;
    size_t min_simplified = 90;
    int retries = 3;
};

/// Queries the client with bounded retries. The text is kept verbatim; an
/// empty reply or exhausted retries give a failed record.
CaptionRecord caption_image(const VsgRequest& req, VlmClient& client, const Tokenizer& tok, const RetryPolicy& rp);

/// Within budget: unchanged (source vlm). Otherwise asks for
/// "simplify: {caption}" up to cfg.retries times, accepting the first reply
/// with min_simplified..max_tokens tokens; failing that, hard truncation.
/// Both fallbacks give source simplified.
CaptionRecord enforce_budget(const std::string& caption, VlmClient* client, const Tokenizer& tok,
                             const BudgetConfig& cfg);

/// Modality plus per-category visual features, from a JSON file
/// {"modality": "...", "categories": {"<category>": "<features>", ...}}.
struct VsgMetadata {
    std::string modality;
    std::map<std::string, std::string> features;

    static VsgMetadata from_json(const nlohmann::json& j);
    static VsgMetadata read(const std::string& path);
    const std::string& features_for(const std::string& category) const;
};

struct PipelineConfig {
    int parallelism = 4;
    RetryPolicy retry;
    BudgetConfig budget;
    bool simple_captions = false;  // no endpoint calls
    bool train_only = false;
};

struct PipelineResult {
    size_t total = 0;
    size_t skipped = 0;  // already complete in the output manifest
    size_t succeeded = 0;
    size_t failed = 0;
    bool partial_failure() const { return failed > 0; }
};

std::vector<CaptionRecord> read_caption_manifest(const std::string& path);
/// image_path -> caption for successful records; throws if any exceeds max_tokens.
std::map<std::string, std::string> caption_map(const std::vector<CaptionRecord>& recs, size_t max_tokens = 120);

/// Captions every selected record of `m` into the line-delimited manifest at
/// out_path. Completed records already present (same path and template hash)
/// are kept and not re-requested; records are appended in completion order
/// by a single writer.
PipelineResult run_caption_pipeline(const DatasetManifest& m, const VsgMetadata& meta, VlmClient* client,
                                    const Tokenizer& tok, const PipelineConfig& cfg, const std::string& out_path);

}  // namespace medart
