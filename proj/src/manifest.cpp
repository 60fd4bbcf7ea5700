#include <fstream>
#include <json.hpp>

#include "bem/error.hpp"
#include "bem/synthdata.hpp"

namespace bem {

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open manifest " + manifest.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.scene_id = j.at("scene_id").get<std::string>();
            e.x_path = j.at("x_path").get<std::string>();
            e.target_paths = j.at("target_paths").get<std::vector<std::string>>();
            if (e.target_paths.empty()) throw ParseError("no target_paths");
            entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(manifest.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        } catch (const ParseError& ex) {
            throw ParseError(manifest.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return entries;
}

void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(manifest, std::ios::trunc);
    if (!out) throw IoError("cannot open " + manifest.string() + " for writing");
    for (const auto& e : entries) {
        nlohmann::ordered_json j;
        j["scene_id"] = e.scene_id;
        j["x_path"] = e.x_path;
        j["target_paths"] = e.target_paths;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed for " + manifest.string());
}

}  // namespace bem
