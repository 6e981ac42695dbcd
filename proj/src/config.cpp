#include "vseg/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vseg {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(const std::string& text) {
    Config c;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        c.kv_[section.empty() ? key : section + "." + key] = value;
    }
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw std::invalid_argument("config: " + key + " is not a number: " + it->second);
    }
}

int Config::get_int(const std::string& key, int fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stoi(it->second);
    } catch (...) {
        throw std::invalid_argument("config: " + key + " is not an integer: " + it->second);
    }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw std::invalid_argument("config: " + key + " is not a boolean: " + v);
}

std::string Config::require(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::invalid_argument("config: missing required key " + key);
    return it->second;
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

void Config::set_double(const std::string& key, double value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    kv_[key] = os.str();
}

void Config::set_int(const std::string& key, int value) { kv_[key] = std::to_string(value); }

void Config::set_bool(const std::string& key, bool value) { kv_[key] = value ? "true" : "false"; }

std::string Config::to_text() const {
    // kv_ is sorted by full key; emit section headers as they change
    std::ostringstream os;
    std::string cur_section;
    bool first = true;
    for (const auto& [k, v] : kv_) {
        std::size_t dot = k.find('.');
        std::string section = dot == std::string::npos ? "" : k.substr(0, dot);
        std::string key = dot == std::string::npos ? k : k.substr(dot + 1);
        if (section != cur_section || first) {
            if (!first) os << "\n";
            if (!section.empty()) os << "[" << section << "]\n";
            cur_section = section;
            first = false;
        }
        os << key << " = " << v << "\n";
    }
    return os.str();
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t Config::hash() const { return fnv1a64(to_text()); }

void write_manifest(const std::string& path, const Config& config, const std::string& command,
                    std::uint64_t seed) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write manifest " + path);
    f << "# run manifest\n";
    f << "version = 1\n";
    f << "command = " << command << "\n";
    f << "seed = " << seed << "\n";
    f << "config_hash = " << std::hex << config.hash() << std::dec << "\n";
    f << "\n# ---- config ----\n";
    f << config.to_text();
    if (!f) throw std::runtime_error("manifest write failed: " + path);
}

}  // namespace vseg
