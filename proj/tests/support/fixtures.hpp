#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#ifndef PERFLAW_FIXTURE_DIR
#error "PERFLAW_FIXTURE_DIR must be defined by the build"
#endif
#ifndef PERFLAW_SCHEMA_DIR
#error "PERFLAW_SCHEMA_DIR must be defined by the build"
#endif

namespace fixtures {

inline std::filesystem::path path(const std::string& name) { return std::filesystem::path(PERFLAW_FIXTURE_DIR) / name; }
inline std::filesystem::path schema(const std::string& name) {
    return std::filesystem::path(PERFLAW_SCHEMA_DIR) / (name + ".schema.json");
}

/// Fresh, empty directory under the system temp dir; removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        dir_ = std::filesystem::temp_directory_path() /
               ("perflaw-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(dir_);
        std::filesystem::create_directories(dir_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(dir_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return dir_; }
    std::filesystem::path operator/(const std::string& name) const { return dir_ / name; }

private:
    std::filesystem::path dir_;
};

}  // namespace fixtures
