#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "maekit/errors.hpp"
#include "maekit/rng.hpp"
#include "maekit/tensor.hpp"

namespace maekit {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- binary graymap (P5)

struct Graymap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

/// Parse a binary 8-bit graymap. Only maxval 255 is accepted.
inline Graymap parse_pgm(const std::string& bytes, const std::string& source = "image") {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&](const char* what) -> std::size_t {
        skip_space();
        if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') {
            throw ImageError(source + ": malformed header, expected " + what);
        }
        std::size_t v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > 1'000'000) throw ImageError(source + ": implausible " + std::string(what));
            ++pos;
        }
        return v;
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        const std::string magic = bytes.substr(0, std::min<std::size_t>(2, bytes.size()));
        throw ImageError(source + ": unsupported format (magic '" + magic + "', expected P5 graymap)");
    }
    pos = 2;
    Graymap img;
    img.width = read_uint("width");
    img.height = read_uint("height");
    const auto maxval = read_uint("maxval");
    if (img.width == 0 || img.height == 0) throw ImageError(source + ": zero image dimension");
    if (maxval != 255) throw ImageError(source + ": maxval " + std::to_string(maxval) + " not supported (need 255)");
    if (pos >= bytes.size()) throw ImageError(source + ": truncated pixel data");
    ++pos;  // single whitespace byte before the raster
    const std::size_t need = img.width * img.height;
    if (bytes.size() - pos < need) {
        throw ImageError(source + ": truncated pixel data (" + std::to_string(bytes.size() - pos) + " of " +
                         std::to_string(need) + " bytes)");
    }
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return img;
}

inline std::string encode_pgm(const Graymap& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

inline std::string read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError(path.string() + ": cannot open");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Load a P5 image as [1,H,W] with value = byte / 255.
template <Scalar T = float>
Tensor<T> load_image(const fs::path& path) {
    const auto img = parse_pgm(read_file_bytes(path), path.string());
    std::vector<T> values(img.pixels.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(img.pixels[i]) / T{255};
    return Tensor<T>({1, img.height, img.width}, std::move(values));
}

/// Load a P5 mask as [1,H,W] with value 1 where byte >= 128, else 0.
template <Scalar T = float>
Tensor<T> load_mask(const fs::path& path) {
    const auto img = parse_pgm(read_file_bytes(path), path.string());
    std::vector<T> values(img.pixels.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = img.pixels[i] >= 128 ? T{1} : T{0};
    return Tensor<T>({1, img.height, img.width}, std::move(values));
}

/// Quantize [1,H,W] (or [H,W]) values in [0,1] to bytes: round(clamp(v) * 255).
template <Scalar T>
Graymap to_graymap(const Tensor<T>& image) {
    if (!(image.rank() == 3 && image.dim(0) == 1) && image.rank() != 2) {
        throw DimensionError("to_graymap: expected [1,H,W], got " + to_string(image.shape()));
    }
    Graymap g;
    g.height = image.dim(image.rank() - 2);
    g.width = image.dim(image.rank() - 1);
    g.pixels.resize(image.numel());
    const auto v = image.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double c = std::clamp(static_cast<double>(v[i]), 0.0, 1.0);
        g.pixels[i] = static_cast<std::uint8_t>(std::lround(c * 255.0));
    }
    return g;
}

template <Scalar T>
void write_image(const Tensor<T>& image, const fs::path& path) {
    write_file_bytes(path, encode_pgm(to_graymap(image)));
}

/// Binary mask {0,1} stored as {0,255}.
template <Scalar T>
void write_mask(const Tensor<T>& mask, const fs::path& path) {
    auto g = to_graymap(mask);
    for (auto& p : g.pixels) p = p >= 128 ? 255 : 0;
    write_file_bytes(path, encode_pgm(g));
}

// ---------------------------------------------------------------- resizing

/// Bilinear resize of [1,H,W] to [1,target,target] with half-pixel centers:
/// source coordinate = (dst + 0.5) * in / out - 0.5, clamped to the image.
template <Scalar T>
Tensor<T> resize_bilinear(const Tensor<T>& image, std::size_t target) {
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw DimensionError("resize_bilinear: expected [1,H,W], got " + to_string(image.shape()));
    }
    if (target == 0) throw ConfigError("resize_bilinear: target size must be positive");
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (h == target && w == target) return image.detach();
    const auto in = image.data();
    auto coord = [](std::size_t dst, std::size_t src_len, std::size_t dst_len) {
        const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_len) / static_cast<double>(dst_len) - 0.5;
        const double clamped = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
        const auto lo = static_cast<std::size_t>(std::floor(clamped));
        const std::size_t hi = std::min(lo + 1, src_len - 1);
        return std::tuple{lo, hi, clamped - static_cast<double>(lo)};
    };
    std::vector<T> out(target * target);
    for (std::size_t y = 0; y < target; ++y) {
        const auto [y0, y1, fy] = coord(y, h, target);
        for (std::size_t x = 0; x < target; ++x) {
            const auto [x0, x1, fx] = coord(x, w, target);
            const double top = (1.0 - fx) * in[y0 * w + x0] + fx * in[y0 * w + x1];
            const double bottom = (1.0 - fx) * in[y1 * w + x0] + fx * in[y1 * w + x1];
            out[y * target + x] = static_cast<T>((1.0 - fy) * top + fy * bottom);
        }
    }
    return Tensor<T>({1, target, target}, std::move(out));
}

// ---------------------------------------------------------------- manifests

enum class TaskKind { pretrain, classify, segment };

inline std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::pretrain: return "pretrain";
        case TaskKind::classify: return "classify";
        case TaskKind::segment: return "segment";
    }
    return "?";
}

inline TaskKind parse_task_kind(const std::string& s) {
    if (s == "pretrain") return TaskKind::pretrain;
    if (s == "classify") return TaskKind::classify;
    if (s == "segment") return TaskKind::segment;
    throw ConfigError("unknown task kind '" + s + "' (expected pretrain, classify or segment)");
}

struct ManifestEntry {
    std::string image;  // relative to the manifest root
    std::optional<int> label;
    std::optional<std::string> mask;

    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    fs::path root;
    TaskKind task = TaskKind::pretrain;
    std::vector<ManifestEntry> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }
    fs::path image_path(const ManifestEntry& e) const { return root / e.image; }
    fs::path mask_path(const ManifestEntry& e) const { return root / *e.mask; }

    void validate() const {
        std::set<std::string> seen;
        for (const auto& e : entries) {
            if (!seen.insert(e.image).second) throw ConfigError("manifest lists '" + e.image + "' twice");
            const bool ok = task == TaskKind::pretrain   ? !e.label && !e.mask
                            : task == TaskKind::classify ? e.label.has_value() && !e.mask
                                                         : e.mask.has_value() && !e.label;
            if (!ok) throw ConfigError("manifest entry '" + e.image + "' does not fit task " + to_string(task));
        }
    }
};

inline const char* kManifestName = "manifest.tsv";

/// One line per entry: image_path[<TAB>label_or_mask_path], LF terminated.
inline std::string format_manifest(const DatasetManifest& m) {
    std::string out;
    for (const auto& e : m.entries) {
        out += e.image;
        if (e.label) out += "\t" + std::to_string(*e.label);
        if (e.mask) out += "\t" + *e.mask;
        out += "\n";
    }
    return out;
}

inline DatasetManifest parse_manifest(const std::string& text, const fs::path& root, TaskKind task) {
    DatasetManifest m{root, task, {}};
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ManifestEntry e;
        const auto tab = line.find('\t');
        e.image = line.substr(0, tab);
        if (tab != std::string::npos) {
            const std::string second = line.substr(tab + 1);
            if (task == TaskKind::classify) {
                try {
                    std::size_t used = 0;
                    e.label = std::stoi(second, &used);
                    if (used != second.size() || *e.label < 0) throw std::invalid_argument(second);
                } catch (const std::exception&) {
                    throw ConfigError("manifest line " + std::to_string(lineno) + ": bad class label '" + second + "'");
                }
            } else {
                e.mask = second;
            }
        }
        m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
}

inline void write_manifest(const DatasetManifest& m, const fs::path& path) { write_file_bytes(path, format_manifest(m)); }

inline DatasetManifest read_manifest(const fs::path& path, TaskKind task) {
    return parse_manifest(read_file_bytes(path), path.parent_path(), task);
}

// ---------------------------------------------------------------- scanning

struct Rejection {
    std::string path;
    std::string reason;
};

struct ScanResult {
    DatasetManifest manifest;
    std::vector<Rejection> rejected;
    std::vector<std::string> warnings;
};

/// `path<TAB>reason` lines.
inline std::string format_rejections(const std::vector<Rejection>& rejected) {
    std::string out;
    for (const auto& r : rejected) out += r.path + "\t" + r.reason + "\n";
    return out;
}

namespace detail {

inline std::optional<std::string> check_pgm(const fs::path& path) {
    try {
        (void)parse_pgm(read_file_bytes(path), path.string());
        return std::nullopt;
    } catch (const ImageError& e) {
        return std::string(e.what());
    }
}

inline std::vector<std::string> sorted_pgm_files(const fs::path& root) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
            files.push_back(fs::relative(entry.path(), root).generic_string());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace detail

/// Build a validated manifest for `root`.
///
/// With a manifest.tsv present its entries are validated in file order.
/// Otherwise: pretrain takes every *.pgm (lexicographic, recursive); classify
/// takes <root>/<class index>/*.pgm; segment pairs images/X.pgm with masks/X.pgm.
/// Unparseable files go to the rejection report instead of the manifest.
inline ScanResult scan_and_validate(const fs::path& root, TaskKind task) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw std::runtime_error("dataset root '" + root.string() + "' is not a readable directory");
    ScanResult out;
    out.manifest.root = root;
    out.manifest.task = task;

    std::vector<ManifestEntry> candidates;
    if (fs::exists(root / kManifestName)) {
        candidates = read_manifest(root / kManifestName, task).entries;
    } else if (task == TaskKind::pretrain) {
        for (auto& f : detail::sorted_pgm_files(root)) candidates.push_back({f, std::nullopt, std::nullopt});
    } else if (task == TaskKind::classify) {
        for (auto& f : detail::sorted_pgm_files(root)) {
            const auto slash = f.find('/');
            const std::string dir = slash == std::string::npos ? "" : f.substr(0, slash);
            if (dir.empty() || !std::all_of(dir.begin(), dir.end(), [](char c) { return c >= '0' && c <= '9'; })) {
                out.rejected.push_back({f, "not inside a class-index directory"});
                continue;
            }
            candidates.push_back({f, std::stoi(dir), std::nullopt});
        }
    } else {
        if (fs::is_directory(root / "images")) {
            for (auto& f : detail::sorted_pgm_files(root / "images")) {
                candidates.push_back({"images/" + f, std::nullopt, "masks/" + f});
            }
        }
    }

    for (auto& e : candidates) {
        if (auto why = detail::check_pgm(root / e.image)) {
            out.rejected.push_back({e.image, *why});
            continue;
        }
        if (e.mask) {
            if (auto why = detail::check_pgm(root / *e.mask)) {
                out.rejected.push_back({*e.mask, *why});
                continue;
            }
        }
        out.manifest.entries.push_back(std::move(e));
    }
    if (out.manifest.empty()) out.warnings.push_back("no valid images found under " + root.string());
    return out;
}

// ---------------------------------------------------------------- splitting

struct SplitSpec {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(train > 0 && val > 0 && test > 0) || std::abs(train + val + test - 1.0) > 1e-9) {
            throw ConfigError("split ratios must be positive and sum to 1");
        }
    }
};

/// Slice sizes for `n` items. Each slice gets floor(n * ratio); the leftover
/// items go one at a time to slices in decreasing-ratio order (ties keep
/// train, val, test order), skipping slices whose share n * ratio is already a
/// whole number.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec) {
    spec.validate();
    const std::array<double, 3> ratios{spec.train, spec.val, spec.test};
    std::array<std::size_t, 3> sizes{};
    std::array<bool, 3> fractional{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double share = static_cast<double>(n) * ratios[i];
        const double rounded = std::round(share);
        const bool whole = std::abs(share - rounded) < 1e-9;
        sizes[i] = whole ? static_cast<std::size_t>(rounded) : static_cast<std::size_t>(std::floor(share));
        fractional[i] = !whole;
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ratios[a] > ratios[b]; });
    std::size_t remainder = n - assigned;
    for (int pass = 0; remainder > 0; ++pass) {
        for (std::size_t i : order) {
            if (remainder == 0) break;
            if (pass == 0 && !fractional[i]) continue;
            ++sizes[i];
            --remainder;
        }
    }
    return sizes;
}

struct SplitResult {
    DatasetManifest train, val, test;
    std::vector<std::string> warnings;
};

/// Seeded permutation, then contiguous train/val/test slices.
inline SplitResult split(const DatasetManifest& manifest, const SplitSpec& spec) {
    if (manifest.empty()) throw ConfigError("split: manifest is empty");
    const auto sizes = split_sizes(manifest.size(), spec);
    std::vector<std::size_t> order(manifest.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(spec.seed);
    rng.shuffle(std::span(order));

    SplitResult out;
    DatasetManifest* parts[3] = {&out.train, &out.val, &out.test};
    const char* names[3] = {"train", "val", "test"};
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        parts[s]->root = manifest.root;
        parts[s]->task = manifest.task;
        for (std::size_t i = 0; i < sizes[s]; ++i) parts[s]->entries.push_back(manifest.entries[order[pos++]]);
        if (sizes[s] == 0) out.warnings.push_back(std::string(names[s]) + " split is empty");
    }
    return out;
}

// ---------------------------------------------------------------- synthetic datasets

namespace detail {

inline std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

/// Shape drawn by the classify/segment generators.
struct ShapeSample {
    std::vector<double> image;
    std::vector<std::uint8_t> mask;  // 0/1
};

/// class 0: filled axis-aligned rectangle; class 1: thin ring.
/// Rectangles cover at least 0.35^2 of the image and rings at most
/// pi (0.25^2 - 0.2^2) ~ 0.071 of it, so the fraction of bright pixels
/// separates the classes by construction.
inline ShapeSample draw_shape(int cls, std::size_t size, Rng& rng) {
    const double s = static_cast<double>(size);
    ShapeSample out{std::vector<double>(size * size), std::vector<std::uint8_t>(size * size, 0)};
    const double background = rng.uniform(0.05, 0.15);
    const double intensity = rng.uniform(0.7, 0.9);
    if (cls == 0) {
        const double w = rng.uniform(0.35, 0.5) * s, h = rng.uniform(0.35, 0.5) * s;
        const double x0 = rng.uniform(0.05 * s, 0.95 * s - w), y0 = rng.uniform(0.05 * s, 0.95 * s - h);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double cx = static_cast<double>(x) + 0.5, cy = static_cast<double>(y) + 0.5;
                if (cx >= x0 && cx < x0 + w && cy >= y0 && cy < y0 + h) out.mask[y * size + x] = 1;
            }
    } else {
        const double outer = rng.uniform(0.18, 0.25) * s;
        const double thickness = rng.uniform(0.035, 0.05) * s;
        const double cx0 = rng.uniform(outer + 0.05 * s, s - outer - 0.05 * s);
        const double cy0 = rng.uniform(outer + 0.05 * s, s - outer - 0.05 * s);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - cx0, dy = static_cast<double>(y) + 0.5 - cy0;
                const double r = std::sqrt(dx * dx + dy * dy);
                if (r <= outer && r >= outer - thickness) out.mask[y * size + x] = 1;
            }
    }
    for (std::size_t i = 0; i < out.image.size(); ++i) {
        out.image[i] = (out.mask[i] ? intensity : background) + 0.03 * rng.normal();
    }
    return out;
}

/// One broad isotropic Gaussian blob of random position, width (0.3-0.5 of the
/// side) and amplitude. Broad single blobs keep the 8-image overfit run well
/// inside its 300-step budget; narrow multi-blob images did not.
inline std::vector<double> draw_blobs(std::size_t size, Rng& rng) {
    const double s = static_cast<double>(size);
    std::vector<double> img(size * size, 0.0);
    const double cx = rng.uniform(0.0, s), cy = rng.uniform(0.0, s);
    const double sigma = rng.uniform(0.3, 0.5) * s;
    const double amp = rng.uniform(0.3, 0.8);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            img[y * size + x] = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
    return img;
}

inline std::string sample_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu.pgm", i);
    return buf;
}

}  // namespace detail

/// Write a synthetic dataset under `out` (images/, masks/, manifest.tsv).
/// Classify and segment sets alternate classes 0,1,0,1,...
inline DatasetManifest gen_synthetic(TaskKind kind, std::size_t n, std::size_t size, std::uint64_t seed, const fs::path& out) {
    if (size == 0) throw ConfigError("gen_synthetic: size must be positive");
    fs::create_directories(out / "images");
    if (kind == TaskKind::segment) fs::create_directories(out / "masks");
    Rng rng(seed);
    DatasetManifest m{out, kind, {}};
    for (std::size_t i = 0; i < n; ++i) {
        const std::string name = detail::sample_name(i);
        Graymap g{size, size, std::vector<std::uint8_t>(size * size)};
        ManifestEntry e{"images/" + name, std::nullopt, std::nullopt};
        if (kind == TaskKind::pretrain) {
            const auto img = detail::draw_blobs(size, rng);
            for (std::size_t p = 0; p < img.size(); ++p) g.pixels[p] = detail::quantize(img[p]);
        } else {
            const int cls = static_cast<int>(i % 2);
            const auto shape = detail::draw_shape(cls, size, rng);
            for (std::size_t p = 0; p < shape.image.size(); ++p) g.pixels[p] = detail::quantize(shape.image[p]);
            if (kind == TaskKind::classify) {
                e.label = cls;
            } else {
                Graymap mg{size, size, std::vector<std::uint8_t>(size * size)};
                for (std::size_t p = 0; p < shape.mask.size(); ++p) mg.pixels[p] = shape.mask[p] ? 255 : 0;
                write_file_bytes(out / "masks" / name, encode_pgm(mg));
                e.mask = "masks/" + name;
            }
        }
        write_file_bytes(out / "images" / name, encode_pgm(g));
        m.entries.push_back(std::move(e));
    }
    write_manifest(m, out / kManifestName);
    return m;
}

// ---------------------------------------------------------------- in-memory sets

/// Images of a manifest, resized to `size` and stacked as [B,1,size,size].
template <Scalar T = float>
Tensor<T> load_images(const DatasetManifest& m, std::size_t size) {
    std::vector<Tensor<T>> images;
    images.reserve(m.size());
    for (const auto& e : m.entries) images.push_back(resize_bilinear(load_image<T>(m.image_path(e)), size));
    if (images.empty()) throw ConfigError("load_images: manifest is empty");
    std::vector<T> values;
    values.reserve(images.size() * size * size);
    for (const auto& img : images) values.insert(values.end(), img.data().begin(), img.data().end());
    return Tensor<T>({images.size(), 1, size, size}, std::move(values));
}

/// Masks of a segment manifest as [B,1,size,size] with values {0,1}.
template <Scalar T = float>
Tensor<T> load_masks(const DatasetManifest& m, std::size_t size) {
    std::vector<T> values;
    for (const auto& e : m.entries) {
        if (!e.mask) throw ConfigError("load_masks: entry '" + e.image + "' has no mask");
        auto mask = resize_bilinear(load_mask<T>(m.mask_path(e)), size);
        for (T v : mask.data()) values.push_back(v >= T{0.5} ? T{1} : T{0});
    }
    if (values.empty()) throw ConfigError("load_masks: manifest is empty");
    return Tensor<T>({m.size(), 1, size, size}, std::move(values));
}

inline std::vector<int> labels_of(const DatasetManifest& m) {
    std::vector<int> labels;
    for (const auto& e : m.entries) {
        if (!e.label) throw ConfigError("labels_of: entry '" + e.image + "' has no label");
        labels.push_back(*e.label);
    }
    return labels;
}

/// Rows `idx` of a batch tensor [B, ...] as a new [k, ...] tensor.
template <Scalar T>
Tensor<T> take_batch(const Tensor<T>& all, std::span<const std::size_t> idx) {
    Shape shape = all.shape();
    const std::size_t row = all.numel() / shape[0];
    shape[0] = idx.size();
    std::vector<T> values;
    values.reserve(idx.size() * row);
    for (auto i : idx) {
        if (i >= all.dim(0)) throw IndexError("take_batch: index " + std::to_string(i) + " out of range");
        const auto begin = all.data().begin() + static_cast<std::ptrdiff_t>(i * row);
        values.insert(values.end(), begin, begin + static_cast<std::ptrdiff_t>(row));
    }
    return Tensor<T>(std::move(shape), std::move(values));
}

}  // namespace maekit
