#include "medart/vsg.hpp"

#include <httplib.h>

#include <cctype>
#include <cmath>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "medart/log.hpp"
#include "medart/rng.hpp"

namespace medart {

using ojson = nlohmann::ordered_json;

void VsgRequest::validate() const {
    if (modality.empty()) throw std::invalid_argument("VSG request: empty modality");
    if (category.empty()) throw std::invalid_argument("VSG request: empty category");
    if (visual_features.empty()) throw std::invalid_argument("VSG request: empty visual features");
}

std::string article_for(const std::string& modality) {
    if (modality.empty()) return "A";
    switch (std::tolower(static_cast<unsigned char>(modality[0]))) {
        case 'a': case 'e': case 'i': case 'o': case 'u': return "An";
        default: return "A";
    }
}

std::string simple_caption(const std::string& modality, const std::string& category) {
    return article_for(modality) + " " + modality + " image of " + category;
}

std::string build_prompt(const VsgRequest& req) {
    req.validate();
    const std::string head = simple_caption(req.modality, req.category);
    return head + ". Please describe the " + req.modality + " image of " + req.category +
           " using the following visual features: " + req.visual_features + ". Start with '" + head +
           "' and ensure the description does not exceed 100 words.";
}

std::string template_hash(const std::string& tokenizer_id, size_t max_tokens) {
    VsgRequest probe{"{modality}", "{category}", "{visual_features}", "", ""};
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0')
       << fnv1a64(build_prompt(probe) + "|" + tokenizer_id + "|" + std::to_string(max_tokens));
    return os.str();
}

std::string source_name(CaptionSource s) {
    switch (s) {
        case CaptionSource::Vlm: return "vlm";
        case CaptionSource::Simplified: return "simplified";
        case CaptionSource::SimpleTemplate: return "simple_template";
    }
    return "?";
}

CaptionSource parse_source(const std::string& s) {
    if (s == "vlm") return CaptionSource::Vlm;
    if (s == "simplified") return CaptionSource::Simplified;
    if (s == "simple_template") return CaptionSource::SimpleTemplate;
    throw std::invalid_argument("unknown caption source '" + s + "'");
}

ojson CaptionRecord::to_json() const {
    ojson j;
    j["image_path"] = image_path;
    j["caption"] = failed ? ojson(nullptr) : ojson(caption);
    j["token_count"] = token_count;
    j["source"] = source_name(source);
    j["category"] = category;
    j["modality"] = modality;
    j["tokenizer_id"] = tokenizer_id;
    j["template_hash"] = template_hash;
    j["status"] = failed ? "failed" : "ok";
    if (failed) j["error"] = error;
    return j;
}

CaptionRecord CaptionRecord::from_json(const nlohmann::json& j) {
    CaptionRecord r;
    r.image_path = j.at("image_path").get<std::string>();
    if (!j.at("caption").is_null()) r.caption = j["caption"].get<std::string>();
    r.token_count = j.at("token_count").get<int64_t>();
    r.source = parse_source(j.at("source").get<std::string>());
    r.category = j.at("category").get<std::string>();
    r.modality = j.at("modality").get<std::string>();
    r.tokenizer_id = j.at("tokenizer_id").get<std::string>();
    r.template_hash = j.value("template_hash", "");
    r.failed = j.value("status", "ok") == "failed";
    r.error = j.value("error", "");
    return r;
}

// ---- mock client ----

namespace {
bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }
const std::string kSimplify = "simplify: ";
}  // namespace

MockVlmClient::MockVlmClient() : responder_(default_response) {}
MockVlmClient::MockVlmClient(Responder r) : responder_(std::move(r)) {}

std::string MockVlmClient::default_response(const std::string& prompt) {
    if (starts_with(prompt, kSimplify)) {
        WordPunctTokenizer tok;
        return tok.truncate(std::string_view(prompt).substr(kSimplify.size()), 100);
    }
    const std::string start_key = "Start with '";
    const std::string feat_key = "visual features: ";
    const auto s = prompt.find(start_key);
    const auto f = prompt.find(feat_key);
    if (s == std::string::npos || f == std::string::npos) return "";
    const auto s_end = prompt.find('\'', s + start_key.size());
    const std::string opening = prompt.substr(s + start_key.size(), s_end - s - start_key.size());
    std::string feats = prompt.substr(f + feat_key.size(), s - 2 - (f + feat_key.size()));
    return opening + " showing " + feats + ".";
}

std::string MockVlmClient::complete(const std::string& prompt, const std::string&) {
    ++calls_;
    if (starts_with(prompt, kSimplify))
        ++simplify_calls_;
    else
        ++caption_calls_;
    {
        std::lock_guard lk(mu_);
        for (const auto& n : fail_needles_)
            if (prompt.find(n) != std::string::npos) throw VlmError("injected failure");
    }
    return responder_(prompt);
}

void MockVlmClient::fail_when_contains(std::string needle) {
    std::lock_guard lk(mu_);
    fail_needles_.push_back(std::move(needle));
}

// ---- http client ----

HttpVlmClient::HttpVlmClient(HttpVlmConfig cfg) : cfg_(std::move(cfg)) {
    const std::string scheme = "http://";
    if (!starts_with(cfg_.url, scheme)) throw std::invalid_argument("VLM endpoint must be an http:// URL: " + cfg_.url);
    const auto slash = cfg_.url.find('/', scheme.size());
    host_ = cfg_.url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : cfg_.url.substr(slash);
}

std::string HttpVlmClient::complete(const std::string& prompt, const std::string& image_b64) {
    httplib::Client cli(host_);
    const auto secs = static_cast<time_t>(cfg_.timeout_s);
    const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    httplib::Headers headers;
    if (!cfg_.auth_env.empty()) {
        const char* token = std::getenv(cfg_.auth_env.c_str());
        if (!token) throw VlmError("auth variable " + cfg_.auth_env + " is not set");
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    ojson body;
    body["model"] = cfg_.model;
    body["prompt"] = prompt;
    body["image"] = image_b64.empty() ? ojson(nullptr) : ojson(image_b64);
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw VlmError("request to " + cfg_.url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw VlmError("endpoint returned HTTP " + std::to_string(res->status));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(res->body);
    } catch (const std::exception& e) {
        throw VlmError(std::string("malformed endpoint reply: ") + e.what());
    }
    for (const char* key : {"text", "response", "caption"})
        if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
    throw VlmError("endpoint reply has no text field");
}

std::string base64_encode(const std::string& bytes) {
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) | (static_cast<uint8_t>(bytes[i + 1]) << 8) |
                           static_cast<uint8_t>(bytes[i + 2]);
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += tbl[(v >> 6) & 63];
        out += tbl[v & 63];
    }
    if (i < bytes.size()) {
        uint32_t v = static_cast<uint8_t>(bytes[i]) << 16;
        if (i + 1 < bytes.size()) v |= static_cast<uint8_t>(bytes[i + 1]) << 8;
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? tbl[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

// ---- captioning ----

namespace {
void backoff(const RetryPolicy& rp, int attempt) {
    if (rp.backoff_ms <= 0.0) return;
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(rp.backoff_ms * std::pow(2.0, attempt)));
}
}  // namespace

CaptionRecord caption_image(const VsgRequest& req, VlmClient& client, const Tokenizer& tok, const RetryPolicy& rp) {
    CaptionRecord rec;
    rec.image_path = req.image_path;
    rec.category = req.category;
    rec.modality = req.modality;
    rec.tokenizer_id = tok.id();
    rec.source = CaptionSource::Vlm;
    const std::string prompt = build_prompt(req);
    const int attempts = std::max(1, rp.retries);
    std::string last_error;
    for (int a = 0; a < attempts; ++a) {
        try {
            std::string text = client.complete(prompt, req.image_b64);
            if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
                rec.failed = true;
                rec.error = "empty response";
                return rec;
            }
            rec.caption = std::move(text);
            rec.token_count = static_cast<int64_t>(tok.count(rec.caption));
            return rec;
        } catch (const VlmError& e) {
            last_error = e.what();
            if (a + 1 < attempts) backoff(rp, a);
        }
    }
    rec.failed = true;
    rec.error = "endpoint failed after " + std::to_string(attempts) + " attempts: " + last_error;
    return rec;
}

CaptionRecord enforce_budget(const std::string& caption, VlmClient* client, const Tokenizer& tok,
                             const BudgetConfig& cfg) {
    if (caption.empty()) throw std::invalid_argument("enforce_budget: empty caption");
    CaptionRecord rec;
    rec.tokenizer_id = tok.id();
    const size_t n = tok.count(caption);
    if (n <= cfg.max_tokens) {
        rec.caption = caption;
        rec.token_count = static_cast<int64_t>(n);
        rec.source = CaptionSource::Vlm;
        return rec;
    }
    rec.source = CaptionSource::Simplified;
    if (client) {
        const std::string prompt = kSimplify + caption;
        for (int a = 0; a < cfg.retries; ++a) {
            std::string reply;
            try {
                reply = client->complete(prompt, "");
            } catch (const VlmError& e) {
                log_warn(std::string("simplifier unreachable, truncating: ") + e.what());
                break;
            }
            const size_t m = tok.count(reply);
            if (m >= cfg.min_simplified && m <= cfg.max_tokens) {
                rec.caption = std::move(reply);
                rec.token_count = static_cast<int64_t>(m);
                return rec;
            }
        }
    }
    log_warn("caption of " + std::to_string(n) + " tokens truncated to " + std::to_string(cfg.max_tokens));
    rec.caption = tok.truncate(caption, cfg.max_tokens);
    rec.token_count = static_cast<int64_t>(tok.count(rec.caption));
    return rec;
}

// ---- metadata ----

VsgMetadata VsgMetadata::from_json(const nlohmann::json& j) {
    VsgMetadata m;
    m.modality = j.at("modality").get<std::string>();
    if (m.modality.empty()) throw std::invalid_argument("metadata: empty modality");
    for (const auto& [k, v] : j.at("categories").items()) m.features[k] = v.get<std::string>();
    return m;
}

VsgMetadata VsgMetadata::read(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read metadata " + path);
    try {
        return from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("metadata " + path + ": " + e.what());
    }
}

const std::string& VsgMetadata::features_for(const std::string& category) const {
    auto it = features.find(category);
    if (it == features.end() || it->second.empty())
        throw std::runtime_error("metadata has no visual features for category '" + category + "'");
    return it->second;
}

// ---- pipeline ----

std::vector<CaptionRecord> read_caption_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read caption manifest " + path);
    std::vector<CaptionRecord> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(CaptionRecord::from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            // A torn final line from an interrupted run is dropped and refetched.
            log_warn(path + ":" + std::to_string(lineno) + ": ignoring unreadable record (" + e.what() + ")");
        }
    }
    return out;
}

std::map<std::string, std::string> caption_map(const std::vector<CaptionRecord>& recs, size_t max_tokens) {
    std::map<std::string, std::string> out;
    for (const auto& r : recs) {
        if (r.failed) continue;
        if (r.token_count > static_cast<int64_t>(max_tokens))
            throw std::runtime_error("caption for " + r.image_path + " has " + std::to_string(r.token_count) +
                                     " tokens, over the " + std::to_string(max_tokens) + "-token budget");
        out[r.image_path] = r.caption;
    }
    return out;
}

namespace {
std::string read_file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw VlmError("cannot read image " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

class ManifestWriter {
public:
    ManifestWriter(const std::string& path, const std::vector<CaptionRecord>& keep) : os_(path, std::ios::trunc) {
        if (!os_) throw std::runtime_error("cannot write caption manifest " + path);
        for (const auto& r : keep) os_ << r.to_json().dump() << '\n';
        os_.flush();
    }
    void append(const CaptionRecord& r) {
        std::lock_guard lk(mu_);
        os_ << r.to_json().dump() << '\n';
        os_.flush();
    }

private:
    std::mutex mu_;
    std::ofstream os_;
};
}  // namespace

PipelineResult run_caption_pipeline(const DatasetManifest& m, const VsgMetadata& meta, VlmClient* client,
                                    const Tokenizer& tok, const PipelineConfig& cfg, const std::string& out_path) {
    if (!cfg.simple_captions && !client) throw std::invalid_argument("caption pipeline needs a client or simple captions");
    if (cfg.parallelism < 1) throw std::invalid_argument("parallelism must be >= 1");
    const std::string thash = template_hash(tok.id(), cfg.budget.max_tokens);

    std::vector<size_t> selected;
    for (size_t i = 0; i < m.records.size(); ++i)
        if (!cfg.train_only || m.records[i].split == Split::Train) selected.push_back(i);

    std::set<std::string> wanted;
    for (size_t i : selected) wanted.insert(m.records[i].image_path);
    std::vector<CaptionRecord> keep;
    std::set<std::string> done;
    if (std::filesystem::exists(out_path)) {
        for (auto& r : read_caption_manifest(out_path))
            if (!r.failed && r.template_hash == thash && r.tokenizer_id == tok.id() && wanted.count(r.image_path) &&
                !done.count(r.image_path)) {
                done.insert(r.image_path);
                keep.push_back(std::move(r));
            }
    }

    PipelineResult res;
    res.total = selected.size();
    res.skipped = keep.size();
    std::vector<size_t> todo;
    for (size_t i : selected)
        if (!done.count(m.records[i].image_path)) todo.push_back(i);

    ManifestWriter writer(out_path, keep);
    std::atomic<size_t> next{0}, ok{0}, bad{0};
    std::mutex err_mu;
    std::exception_ptr hard_error;

    auto work = [&] {
        for (;;) {
            const size_t k = next++;
            if (k >= todo.size()) return;
            const auto& src = m.records[todo[k]];
            CaptionRecord rec;
            try {
                VsgRequest req{meta.modality, src.category, "", "", src.image_path};
                if (cfg.simple_captions) {
                    rec.caption = simple_caption(meta.modality, src.category);
                    rec.source = CaptionSource::SimpleTemplate;
                    rec.token_count = static_cast<int64_t>(tok.count(rec.caption));
                } else {
                    req.visual_features = meta.features_for(src.category);
                    try {
                        if (client->wants_image()) req.image_b64 = base64_encode(read_file_bytes(src.image_path));
                        rec = caption_image(req, *client, tok, cfg.retry);
                    } catch (const VlmError& e) {
                        rec.failed = true;
                        rec.error = e.what();
                    }
                    if (!rec.failed) {
                        CaptionRecord b = enforce_budget(rec.caption, client, tok, cfg.budget);
                        rec.caption = std::move(b.caption);
                        rec.token_count = b.token_count;
                        rec.source = b.source;
                    }
                }
                rec.image_path = src.image_path;
                rec.category = src.category;
                rec.modality = meta.modality;
                rec.tokenizer_id = tok.id();
                rec.template_hash = thash;
                if (!rec.failed && rec.token_count > static_cast<int64_t>(cfg.budget.max_tokens))
                    throw std::logic_error("caption over budget after enforcement: " + src.image_path);
                if (rec.failed) {
                    log_warn("caption failed for " + src.image_path + ": " + rec.error);
                    ++bad;
                } else {
                    ++ok;
                }
                writer.append(rec);
            } catch (...) {
                std::lock_guard lk(err_mu);
                if (!hard_error) hard_error = std::current_exception();
                next = todo.size();
                return;
            }
        }
    };

    const int n_threads = std::min<int>(cfg.parallelism, static_cast<int>(std::max<size_t>(1, todo.size())));
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (hard_error) std::rethrow_exception(hard_error);
    res.succeeded = ok;
    res.failed = bad;
    return res;
}

}  // namespace medart
