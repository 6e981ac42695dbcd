#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vseg {

// Flat declarative run configuration: "[section]" headers and "key = value"
// lines, '#' comments. Keys are addressed as "section.key".
class Config {
public:
    static Config parse(const std::string& text);
    static Config load(const std::string& path);

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // throws on absence
    std::string require(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    void set_double(const std::string& key, double value);
    void set_int(const std::string& key, int value);
    void set_bool(const std::string& key, bool value);

    // canonical serialization: sections and keys in sorted order
    std::string to_text() const;
    std::uint64_t hash() const;  // FNV-1a over the canonical text

private:
    std::map<std::string, std::string> kv_;
};

// Every run drops a manifest beside its outputs: enough to reproduce the run
// bit-for-bit (canonical config, its hash, seed, tool version, command line).
void write_manifest(const std::string& path, const Config& config, const std::string& command,
                    std::uint64_t seed);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace vseg
