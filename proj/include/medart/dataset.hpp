#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "medart/hldf.hpp"
#include "medart/rng.hpp"

namespace medart {

enum class Split { Train, Test };
std::string split_name(Split s);
Split parse_split(const std::string& s);

struct ManifestRecord {
    std::string image_path;
    std::string category;
    Split split = Split::Train;
    std::optional<std::string> caption;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;

    /// One JSON object per line; field order image_path, category, split, caption.
    std::string to_jsonl() const;
    static DatasetManifest from_jsonl(const std::string& text);
    void write(const std::string& path) const;
    static DatasetManifest read(const std::string& path);

    std::vector<size_t> indices(Split s) const;
    std::vector<std::string> categories() const;
    /// Throws unless every train record carries a caption.
    void require_train_captions() const;
};

/// Every subdirectory of root is a category; *.png files inside are its images.
/// Each category is shuffled by its own substream of `seed`, and the first
/// ceil(ratio * n) become train.
DatasetManifest scan_and_split(const std::string& root_dir, double ratio, uint64_t seed);

/// Attaches captions keyed by image_path; returns the number joined.
size_t join_captions(DatasetManifest& m, const std::map<std::string, std::string>& captions);

struct LoadOptions {
    int target_size = 32;
    bool skip_bad = false;  // decode failure: skip with a warning instead of aborting
    bool require_captions = true;
};

TrainBatch load_batch(const DatasetManifest& m, std::span<const size_t> indices, const LoadOptions& opt);

/// Shuffled train indices chunked into batches; the last partial batch is kept.
std::vector<std::vector<size_t>> epoch_batches(const DatasetManifest& m, int batch, Rng& rng);

/// Loads batches on a background thread, at most `capacity` ahead; yields
/// them in the order given.
class BatchPrefetcher {
public:
    BatchPrefetcher(const DatasetManifest& m, std::vector<std::vector<size_t>> order, LoadOptions opt,
                    size_t capacity = 2);
    ~BatchPrefetcher();
    BatchPrefetcher(const BatchPrefetcher&) = delete;
    BatchPrefetcher& operator=(const BatchPrefetcher&) = delete;

    /// Next batch, or nullopt when exhausted. Rethrows loader errors.
    std::optional<TrainBatch> next();

private:
    void run();

    const DatasetManifest& manifest_;
    std::vector<std::vector<size_t>> order_;
    LoadOptions opt_;
    size_t capacity_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<TrainBatch> ready_;
    std::exception_ptr error_;
    bool done_ = false;
    bool stop_ = false;
    std::thread worker_;
};

}  // namespace medart
