#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <unistd.h>

#ifndef MEDART_TEST_DATA
#define MEDART_TEST_DATA "tests/data"
#endif

namespace medart::testing {

inline std::string data_path(const std::string& rel) { return std::string(MEDART_TEST_DATA) + "/" + rel; }

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream is(path);
    return nlohmann::json::parse(is);
}

inline std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_text(const std::string& path, const std::string& s) {
    std::ofstream os(path, std::ios::binary);
    os << s;
}

/// Fresh scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("medart_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string str(const std::string& rel = "") const { return rel.empty() ? path_.string() : (path_ / rel).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace medart::testing
