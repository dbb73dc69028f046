#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

namespace plan_harvest::testing {

struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& prefix = "ph") {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               (prefix + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }

    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

} // namespace plan_harvest::testing
