#include "stainfocus/dataset.hpp"

#include "stainfocus/errors.hpp"
#include "stainfocus/keyvalue.hpp"
#include "stainfocus/random.hpp"

#include <algorithm>
#include <cstdio>
#include <iterator>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stainfocus {

void ZStack::validate() const {
    if (planes.empty()) throw std::invalid_argument("z-stack '" + fov_id + "' has no planes");
    if (best_focus_index < 0 || best_focus_index >= static_cast<int>(planes.size()))
        throw std::invalid_argument("best-focus index " + std::to_string(best_focus_index) + " out of range for " +
                                    std::to_string(planes.size()) + " planes");
    for (const auto& p : planes)
        if (p.height != planes.front().height || p.width != planes.front().width)
            throw std::invalid_argument("z-stack '" + fov_id + "' has planes of differing size");
}

std::vector<int> relabel_positions(int plane_count, int best_focus_index, int levels) {
    if (levels < 2) throw std::invalid_argument("relabel: level count must be >= 2, got " + std::to_string(levels));
    if (plane_count <= 0) throw std::invalid_argument("relabel: empty stack");
    if (best_focus_index < 0 || best_focus_index >= plane_count)
        throw std::invalid_argument("relabel: best-focus index out of range");
    const int max_d = std::max(best_focus_index, plane_count - 1 - best_focus_index);
    std::vector<int> ranks(static_cast<std::size_t>(plane_count));
    for (int z = 0; z < plane_count; ++z) {
        const long d = std::abs(z - best_focus_index);
        ranks[static_cast<std::size_t>(z)] = static_cast<int>(std::min<long>(levels - 1, d * levels / (max_d + 1)));
    }
    return ranks;
}

std::vector<int> relabel_zstack(const ZStack& stack, int levels) {
    if (levels < 2) throw std::invalid_argument("relabel: level count must be >= 2, got " + std::to_string(levels));
    stack.validate();
    return relabel_positions(static_cast<int>(stack.planes.size()), stack.best_focus_index, levels);
}

int DatasetManifest::stain_index(const std::string& name) const {
    const auto it = std::find(stain_vocabulary.begin(), stain_vocabulary.end(), name);
    return it == stain_vocabulary.end() ? -1 : static_cast<int>(it - stain_vocabulary.begin());
}

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& entry) const {
    const std::filesystem::path p(entry.image_path);
    return p.is_absolute() || root.empty() ? p : root / p;
}

void DatasetManifest::validate() const {
    if (num_levels < 2) throw ValidationError("manifest num_levels must be >= 2");
    std::set<std::string> names(stain_vocabulary.begin(), stain_vocabulary.end());
    if (names.size() != stain_vocabulary.size()) throw ValidationError("stain vocabulary contains duplicates");
    std::set<std::string> paths;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (!names.count(e.stain)) throw ValidationError("entry " + std::to_string(i) + ": unknown stain '" + e.stain + "'");
        if (e.rank < 0 || e.rank >= num_levels)
            throw ValidationError("entry " + std::to_string(i) + ": rank " + std::to_string(e.rank) + " outside [0, " +
                                  std::to_string(num_levels - 1) + "]");
        if (e.z_index < 0) throw ValidationError("entry " + std::to_string(i) + ": negative z_index");
        if (!paths.insert(e.image_path).second)
            throw ValidationError("entry " + std::to_string(i) + ": duplicate image path '" + e.image_path + "'");
    }
}

std::filesystem::path metadata_path_for(const std::filesystem::path& csv_path) {
    auto meta = csv_path;
    meta.replace_extension(".meta");
    return meta;
}

namespace {

const char* const kHeader = "image_path,stain,tissue,fov_id,z_index,rank";

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_row(const std::string& line, int line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    if (quoted) throw ParseError("manifest line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(cur);
    return fields;
}

int parse_int(const std::string& s, const char* field, int line_no) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError("manifest line " + std::to_string(line_no) + ": " + field + " is not an integer: '" + s + "'");
    }
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& csv_path) {
    DatasetManifest m;
    m.root = csv_path.parent_path();

    const auto meta_path = metadata_path_for(csv_path);
    const KeyValues meta = read_key_values(meta_path);
    const auto levels = meta.find("num_levels");
    const auto stains = meta.find("stains");
    if (levels == meta.end() || stains == meta.end())
        throw ParseError(meta_path.string() + ": requires 'num_levels' and 'stains'");
    m.num_levels = parse_int(levels->second, "num_levels", 0);
    m.stain_vocabulary = split_list(stains->second);

    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open manifest " + csv_path.string());
    std::string line;
    if (!std::getline(in, line) || trim(line) != kHeader)
        throw ParseError("manifest line 1: expected header '" + std::string(kHeader) + "'");
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_csv_row(line, line_no);
        if (f.size() != 6)
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected 6 fields, found " + std::to_string(f.size()));
        ManifestEntry e{f[0], f[1], f[2], f[3], parse_int(f[4], "z_index", line_no), parse_int(f[5], "rank", line_no)};
        m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& csv_path) {
    manifest.validate();
    if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("cannot write manifest " + csv_path.string());
    out << kHeader << '\n';
    for (const auto& e : manifest.entries) {
        out << csv_field(e.image_path) << ',' << csv_field(e.stain) << ',' << csv_field(e.tissue) << ','
            << csv_field(e.fov_id) << ',' << e.z_index << ',' << e.rank << '\n';
    }
    write_key_values(metadata_path_for(csv_path),
                     {{"num_levels", std::to_string(manifest.num_levels)}, {"stains", join_list(manifest.stain_vocabulary)}});
}

DatasetManifest fewshot_sample(const DatasetManifest& manifest, int shots, std::uint64_t seed) {
    if (shots < 0) throw std::invalid_argument("fewshot: k must be non-negative");
    DatasetManifest out;
    out.stain_vocabulary = manifest.stain_vocabulary;
    out.num_levels = manifest.num_levels;
    out.root = manifest.root;
    if (shots == 0) return out;

    std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const auto& e = manifest.entries[i];
        cells[{manifest.stain_index(e.stain), e.rank}].push_back(i);
    }
    Rng rng(seed);
    for (int s = 0; s < static_cast<int>(manifest.stain_vocabulary.size()); ++s) {
        for (int r = 0; r < manifest.num_levels; ++r) {
            auto members = cells[{s, r}];
            if (static_cast<int>(members.size()) < shots)
                throw ValidationError("fewshot: cell (stain '" + manifest.stain_vocabulary[static_cast<std::size_t>(s)] +
                                      "', rank " + std::to_string(r) + ") has " + std::to_string(members.size()) +
                                      " entries, need " + std::to_string(shots));
            // Partial Fisher-Yates: first `shots` positions are a uniform draw without replacement.
            for (int i = 0; i < shots; ++i) {
                std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), members.size() - 1);
                std::swap(members[static_cast<std::size_t>(i)], members[pick(rng)]);
                out.entries.push_back(manifest.entries[members[static_cast<std::size_t>(i)]]);
            }
        }
    }
    return out;
}

std::pair<DatasetManifest, DatasetManifest> split_by_fov(const DatasetManifest& manifest, double test_fraction,
                                                         std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction >= 1.0) throw std::invalid_argument("split: test fraction must be in [0, 1)");
    std::map<std::string, std::vector<std::string>> fovs_by_stain;
    for (const auto& e : manifest.entries) {
        auto& list = fovs_by_stain[e.stain];
        if (std::find(list.begin(), list.end(), e.fov_id) == list.end()) list.push_back(e.fov_id);
    }
    std::set<std::pair<std::string, std::string>> held_out;
    for (auto& [stain, fovs] : fovs_by_stain) {
        std::sort(fovs.begin(), fovs.end());
        Rng rng(derive_seed(seed, stain));
        std::shuffle(fovs.begin(), fovs.end(), rng);
        auto count = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(fovs.size())));
        if (test_fraction > 0.0 && count == 0 && fovs.size() >= 2) count = 1;
        for (std::size_t i = 0; i < count; ++i) held_out.insert({stain, fovs[i]});
    }
    DatasetManifest train = manifest;
    DatasetManifest test = manifest;
    train.entries.clear();
    test.entries.clear();
    for (const auto& e : manifest.entries) (held_out.count({e.stain, e.fov_id}) ? test : train).entries.push_back(e);
    return {std::move(train), std::move(test)};
}

std::vector<Sample> load_samples(const DatasetManifest& manifest) {
    std::vector<Sample> samples;
    samples.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        const int stain = manifest.stain_index(e.stain);
        if (stain < 0) throw ValidationError("unknown stain '" + e.stain + "'");
        samples.push_back(Sample{read_pgm(manifest.resolve(e)), stain, e.rank, e.fov_id, e.z_index});
    }
    return samples;
}

std::string dataset_digest(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a("");
    for (const auto& f : files) {
        h = fnv1a(std::filesystem::relative(f, dir).generic_string(), h);
        std::ifstream in(f, std::ios::binary);
        const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        h = fnv1a(bytes, h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

DatasetManifest with_absolute_paths(const DatasetManifest& manifest) {
    DatasetManifest out = manifest;
    for (auto& e : out.entries) e.image_path = std::filesystem::absolute(manifest.resolve(e)).lexically_normal().string();
    out.root.clear();
    return out;
}

}  // namespace stainfocus
