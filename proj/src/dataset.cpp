#include "medart/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>

#include "medart/image_io.hpp"
#include "medart/log.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace medart {

std::string split_name(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

std::string DatasetManifest::to_jsonl() const {
    std::string out;
    for (const auto& r : records) {
        ojson j;
        j["image_path"] = r.image_path;
        j["category"] = r.category;
        j["split"] = split_name(r.split);
        j["caption"] = r.caption ? ojson(*r.caption) : ojson(nullptr);
        out += j.dump();
        out += '\n';
    }
    return out;
}

DatasetManifest DatasetManifest::from_jsonl(const std::string& text) {
    DatasetManifest m;
    std::istringstream is(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = ojson::parse(line);
            ManifestRecord r;
            r.image_path = j.at("image_path").get<std::string>();
            r.category = j.at("category").get<std::string>();
            r.split = parse_split(j.at("split").get<std::string>());
            if (j.contains("caption") && !j["caption"].is_null()) r.caption = j["caption"].get<std::string>();
            m.records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return m;
}

void DatasetManifest::write(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write manifest " + path);
    os << to_jsonl();
}

DatasetManifest DatasetManifest::read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read manifest " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return from_jsonl(ss.str());
}

std::vector<size_t> DatasetManifest::indices(Split s) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < records.size(); ++i)
        if (records[i].split == s) out.push_back(i);
    return out;
}

std::vector<std::string> DatasetManifest::categories() const {
    std::set<std::string> s;
    for (const auto& r : records) s.insert(r.category);
    return {s.begin(), s.end()};
}

void DatasetManifest::require_train_captions() const {
    for (const auto& r : records)
        if (r.split == Split::Train && !r.caption)
            throw std::runtime_error("train record without caption: " + r.image_path);
}

namespace {
bool is_png(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png";
}
}  // namespace

DatasetManifest scan_and_split(const std::string& root_dir, double ratio, uint64_t seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("split ratio must be in (0, 1]");
    if (!fs::is_directory(root_dir)) throw std::runtime_error("dataset root is not a directory: " + root_dir);
    std::vector<fs::path> cats;
    for (const auto& e : fs::directory_iterator(root_dir))
        if (e.is_directory()) cats.push_back(e.path());
    std::sort(cats.begin(), cats.end());
    if (cats.empty()) throw std::runtime_error("no category directories under " + root_dir);

    const SeedStreams seeds(seed);
    DatasetManifest m;
    for (const auto& cdir : cats) {
        const std::string category = cdir.filename().string();
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(cdir))
            if (e.is_regular_file() && is_png(e.path())) files.push_back(e.path().generic_string());
        if (files.empty()) throw std::runtime_error("empty category '" + category + "'");
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            if (!png_readable(f)) throw std::runtime_error("unreadable image " + f);
        Rng rng = seeds.stream("split/" + category);
        rng.shuffle(files);
        // Guard against 0.8 * 10 evaluating to 8.000000000000002.
        const auto n_train =
            static_cast<size_t>(std::ceil(ratio * static_cast<double>(files.size()) - 1e-9));
        for (size_t i = 0; i < files.size(); ++i)
            m.records.push_back({files[i], category, i < n_train ? Split::Train : Split::Test, std::nullopt});
    }
    return m;
}

size_t join_captions(DatasetManifest& m, const std::map<std::string, std::string>& captions) {
    size_t n = 0;
    for (auto& r : m.records) {
        auto it = captions.find(r.image_path);
        if (it != captions.end()) {
            r.caption = it->second;
            ++n;
        }
    }
    return n;
}

TrainBatch load_batch(const DatasetManifest& m, std::span<const size_t> indices, const LoadOptions& opt) {
    if (opt.target_size <= 0) throw std::invalid_argument("target_size must be positive");
    std::vector<double> px;
    TrainBatch out;
    int64_t n = 0;
    for (size_t idx : indices) {
        if (idx >= m.records.size()) throw std::out_of_range("manifest index " + std::to_string(idx));
        const auto& r = m.records[idx];
        if (opt.require_captions && !r.caption) throw std::runtime_error("record without caption: " + r.image_path);
        Image img;
        try {
            img = read_png(r.image_path);
        } catch (const std::exception& e) {
            if (!opt.skip_bad) throw;
            log_warn(std::string("skipping: ") + e.what());
            continue;
        }
        append_chw(resize_bilinear(img, opt.target_size, opt.target_size), px);
        out.captions.push_back(r.caption.value_or(""));
        ++n;
    }
    if (n == 0) throw std::runtime_error("load_batch: no images loaded");
    out.images = Tensor::from({n, 3, opt.target_size, opt.target_size}, std::move(px));
    return out;
}

std::vector<std::vector<size_t>> epoch_batches(const DatasetManifest& m, int batch, Rng& rng) {
    if (batch < 1) throw std::invalid_argument("batch must be >= 1");
    auto idx = m.indices(Split::Train);
    if (idx.empty()) throw std::runtime_error("manifest has no train records");
    rng.shuffle(idx);
    std::vector<std::vector<size_t>> out;
    for (size_t i = 0; i < idx.size(); i += static_cast<size_t>(batch))
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), i + batch)));
    return out;
}

BatchPrefetcher::BatchPrefetcher(const DatasetManifest& m, std::vector<std::vector<size_t>> order, LoadOptions opt,
                                 size_t capacity)
    : manifest_(m), order_(std::move(order)), opt_(opt), capacity_(std::max<size_t>(1, capacity)) {
    worker_ = std::thread([this] { run(); });
}

BatchPrefetcher::~BatchPrefetcher() {
    {
        std::lock_guard lk(mu_);
        stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
}

void BatchPrefetcher::run() {
    for (const auto& b : order_) {
        TrainBatch tb;
        try {
            tb = load_batch(manifest_, b, opt_);
        } catch (...) {
            std::lock_guard lk(mu_);
            error_ = std::current_exception();
            done_ = true;
            cv_.notify_all();
            return;
        }
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || ready_.size() < capacity_; });
        if (stop_) return;
        ready_.push_back(std::move(tb));
        cv_.notify_all();
    }
    std::lock_guard lk(mu_);
    done_ = true;
    cv_.notify_all();
}

std::optional<TrainBatch> BatchPrefetcher::next() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !ready_.empty() || done_; });
    if (!ready_.empty()) {
        TrainBatch b = std::move(ready_.front());
        ready_.pop_front();
        cv_.notify_all();
        return b;
    }
    if (error_) std::rethrow_exception(error_);
    return std::nullopt;
}

}  // namespace medart
