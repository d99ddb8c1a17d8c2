#include "maskgen/data_tokens.hpp"

#include "maskgen/error.hpp"
#include "maskgen/kernels.hpp"
#include "maskgen/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace maskgen {

using nlohmann::json;

// ---------------------------------------------------------------------------
// procedural rendering
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
    float r, g, b;
};

Rgb hsv(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: r = c; g = x; break;
        case 1: r = x; g = c; break;
        case 2: g = c; b = x; break;
        case 3: g = x; b = c; break;
        case 4: r = x; b = c; break;
        default: r = c; b = x; break;
    }
    const double m = v - c;
    return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

// Position-hashed noise in [0,1); independent of pixel evaluation order.
double hash_noise(uint64_t seed, int i, int j) {
    uint64_t h = seed ^ (static_cast<uint64_t>(i) * 0x9e3779b97f4a7c15ull) ^
                 (static_cast<uint64_t>(j) * 0xc2b2ae3d27d4eb4full);
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ull;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Signed distance of a point (in shape-local unit coordinates) to the class
// shape; negative inside. Ten families, cycled when classes > 10.
double shape_sdf(int family, double x, double y) {
    const double ax = std::fabs(x), ay = std::fabs(y);
    const double r = std::sqrt(x * x + y * y);
    switch (family % 10) {
        case 0: return r - 0.5;                                   // disk
        case 1: return std::max(ax, ay) - 0.45;                   // square
        case 2: {                                                 // triangle (up)
            const double k = 1.7320508075688772;                  // sqrt(3)
            double d = std::max(ax * k * 0.5 + (-y) * 0.5, y) - 0.42;
            return d;
        }
        case 3: return std::fabs(r - 0.38) - 0.10;                // ring
        case 4:                                                   // plus
            return std::min(std::max(ax - 0.5, ay - 0.16), std::max(ay - 0.5, ax - 0.16));
        case 5: return ax + ay - 0.55;                            // diamond
        case 6: {                                                 // five-point blob star
            const double th = std::atan2(y, x);
            return r - (0.33 + 0.14 * std::cos(5.0 * th));
        }
        case 7: {                                                 // two side-by-side dots
            const double d1 = std::hypot(x - 0.26, y) - 0.18;
            const double d2 = std::hypot(x + 0.26, y) - 0.18;
            return std::min(d1, d2);
        }
        case 8: {                                                 // crescent
            const double d1 = r - 0.45;
            const double d2 = std::hypot(x - 0.2, y) - 0.38;
            return std::max(d1, -d2);
        }
        default: {                                                // three bars
            const double yy = std::fmod(ay + 0.125, 0.25) - 0.125;
            return std::max(std::fabs(yy) - 0.06, std::max(ax - 0.48, ay - 0.44));
        }
    }
}

Image render_image(int family, int classes, int h, int w, Rng& rng) {
    // All stochastic choices are drawn up front in a fixed order.
    const double hue = static_cast<double>(family) / std::max(1, classes) + (rng.uniform() - 0.5) * 0.05;
    const double sat = 0.6 + rng.uniform() * 0.3;
    const double val = 0.7 + rng.uniform() * 0.3;
    const double bg_hue = rng.uniform();
    const double bg_val = 0.3 + rng.uniform() * 0.3;
    const double cx = 0.5 + (rng.uniform() - 0.5) * 0.3;
    const double cy = 0.5 + (rng.uniform() - 0.5) * 0.3;
    const double scale = 0.55 + rng.uniform() * 0.35;  // shape diameter fraction
    const double rot = (rng.uniform() - 0.5) * 0.7;    // +-20 degrees, keeps families distinct
    const uint64_t tex_seed = rng.next_u64();
    const double tex_fx = 1.0 + rng.uniform() * 3.0;
    const double tex_fy = 1.0 + rng.uniform() * 3.0;
    const double tex_ph = rng.uniform() * 6.283185307179586;

    const Rgb fg = hsv(hue, sat, val);
    const Rgb bg = hsv(bg_hue, 0.15, bg_val);
    const double cosr = std::cos(rot), sinr = std::sin(rot);
    const double extent = std::min(h, w) * scale;

    Image img(h, w);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            // textured background: low-frequency waves plus pixel hash grain
            const double u = (j + 0.5) / w, v = (i + 0.5) / h;
            const double wave = 0.06 * std::sin(6.283185307179586 * (tex_fx * u + tex_fy * v) + tex_ph);
            const double grain = 0.05 * (hash_noise(tex_seed, i, j) - 0.5);
            float r = static_cast<float>(bg.r + wave + grain);
            float g = static_cast<float>(bg.g + wave + grain);
            float b = static_cast<float>(bg.b + wave + grain);

            // shape-local coordinates
            const double dx = (j + 0.5 - cx * w) / extent;
            const double dy = (i + 0.5 - cy * h) / extent;
            const double lx = cosr * dx + sinr * dy;
            const double ly = -sinr * dx + cosr * dy;
            const double sd = shape_sdf(family, lx, ly);
            // soft one-pixel edge
            const double cover = std::clamp(0.5 - sd * extent, 0.0, 1.0);
            if (cover > 0.0) {
                r = static_cast<float>(r * (1.0 - cover) + fg.r * cover);
                g = static_cast<float>(g * (1.0 - cover) + fg.g * cover);
                b = static_cast<float>(b * (1.0 - cover) + fg.b * cover);
            }
            float* p = img.px(i, j);
            p[0] = std::clamp(r, 0.0f, 1.0f);
            p[1] = std::clamp(g, 0.0f, 1.0f);
            p[2] = std::clamp(b, 0.0f, 1.0f);
        }
    }
    return img;
}

} // namespace

LabeledImageSet generate_dataset(const DatasetSpec& spec) {
    if (spec.classes < 1 || spec.height < 1 || spec.width < 1)
        throw ConfigError("dataset spec requires positive classes and dims");
    if (spec.count < spec.classes)
        throw ConfigError("dataset count " + std::to_string(spec.count) + " < classes " +
                          std::to_string(spec.classes));

    LabeledImageSet set;
    set.classes = spec.classes;
    set.height = spec.height;
    set.width = spec.width;
    set.seed = spec.seed;
    set.images.resize(spec.count);
    set.labels.resize(spec.count);
    for (int i = 0; i < spec.count; ++i) set.labels[i] = i % spec.classes;  // balanced within +-1
#pragma omp parallel for schedule(static)
    for (int i = 0; i < spec.count; ++i) {
        Rng rng = fork_rng(spec.seed, "image", static_cast<uint64_t>(i));
        set.images[i] = render_image(set.labels[i], spec.classes, spec.height, spec.width, rng);
    }
    return set;
}

LabeledImageSet ingest_image_folder(const std::filesystem::path& root, int height, int width) {
    if (!std::filesystem::is_directory(root)) throw IoError("missing dataset directory: " + root.string());
    std::vector<std::filesystem::path> class_dirs;
    for (const auto& e : std::filesystem::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw ConfigError("no class subdirectories in " + root.string());

    LabeledImageSet set;
    set.classes = static_cast<int>(class_dirs.size());
    set.height = height;
    set.width = width;
    for (int c = 0; c < set.classes; ++c) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(class_dirs[c]))
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            Image img = read_png(f);
            if (img.h != height || img.w != width) img = resize_bilinear(img, height, width);
            set.images.push_back(std::move(img));
            set.labels.push_back(c);
        }
    }
    if (set.images.empty()) throw ConfigError("no PNG images found under " + root.string());
    return set;
}

// ---------------------------------------------------------------------------
// codebook fit (k-means with k-means++ seeding)
// ---------------------------------------------------------------------------

namespace {

std::vector<float> extract_patches(const LabeledImageSet& set, int ph, int pw) {
    const int pr = set.height / ph, pc = set.width / pw;
    const int dim = ph * pw * 3;
    std::vector<float> patches(static_cast<size_t>(set.images.size()) * pr * pc * dim);
    size_t idx = 0;
    for (const Image& img : set.images) {
        for (int bi = 0; bi < pr; ++bi)
            for (int bj = 0; bj < pc; ++bj) {
                float* dst = patches.data() + idx * dim;
                int t = 0;
                for (int i = 0; i < ph; ++i)
                    for (int j = 0; j < pw; ++j) {
                        const float* p = img.px(bi * ph + i, bj * pw + j);
                        dst[t++] = p[0];
                        dst[t++] = p[1];
                        dst[t++] = p[2];
                    }
                ++idx;
            }
    }
    return patches;
}

size_t count_distinct(const std::vector<float>& pts, int n, int dim) {
    std::set<uint64_t> hashes;
    for (int i = 0; i < n; ++i)
        hashes.insert(fnv1a64_bytes(pts.data() + static_cast<size_t>(i) * dim,
                                    static_cast<size_t>(dim) * sizeof(float)));
    return hashes.size();
}

} // namespace

Codebook fit_codebook(const LabeledImageSet& set, int k, int patch_h, int patch_w,
                      uint64_t fit_seed, int max_iters) {
    if (k < 2) throw ConfigError("codebook size must be >= 2");
    if (set.height % patch_h != 0 || set.width % patch_w != 0)
        throw ConfigError("image dims not divisible by patch dims");
    const int dim = patch_h * patch_w * 3;
    const std::vector<float> patches = extract_patches(set, patch_h, patch_w);
    const int n = static_cast<int>(patches.size() / dim);
    if (n < k) throw QuantizationError("only " + std::to_string(n) + " patches for k=" + std::to_string(k));
    if (static_cast<int>(count_distinct(patches, n, dim)) < k)
        throw QuantizationError("fewer distinct patches than k=" + std::to_string(k));

    Rng rng = fork_rng(fit_seed, "kmeans++");
    std::vector<float> centroids(static_cast<size_t>(k) * dim);
    std::vector<float> d2(n);

    // k-means++ seeding
    const int first = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
    std::memcpy(centroids.data(), patches.data() + static_cast<size_t>(first) * dim,
                static_cast<size_t>(dim) * sizeof(float));
    kernels::assign_nearest(patches.data(), n, centroids.data(), 1, dim, nullptr, d2.data());
    for (int j = 1; j < k; ++j) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += d2[i];
        int pick = 0;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                acc += d2[i];
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
        }
        float* cj = centroids.data() + static_cast<size_t>(j) * dim;
        std::memcpy(cj, patches.data() + static_cast<size_t>(pick) * dim,
                    static_cast<size_t>(dim) * sizeof(float));
        // fold the new centroid into the min-distance field
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            const float* v = patches.data() + static_cast<size_t>(i) * dim;
            double d = 0.0;
            for (int t = 0; t < dim; ++t) {
                const double diff = static_cast<double>(v[t]) - static_cast<double>(cj[t]);
                d += diff * diff;
            }
            if (d < d2[i]) d2[i] = static_cast<float>(d);
        }
    }

    // Lloyd iterations; empty clusters steal the globally farthest point.
    std::vector<int> assign(n), prev_assign(n, -1);
    std::vector<double> sums(static_cast<size_t>(k) * dim);
    std::vector<int> counts(k);
    for (int iter = 0; iter < max_iters; ++iter) {
        kernels::assign_nearest(patches.data(), n, centroids.data(), k, dim, assign.data(), d2.data());
        if (assign == prev_assign) break;
        prev_assign = assign;

        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            const float* v = patches.data() + static_cast<size_t>(i) * dim;
            double* s = sums.data() + static_cast<size_t>(assign[i]) * dim;
            for (int t = 0; t < dim; ++t) s[t] += v[t];
            ++counts[assign[i]];
        }
        for (int j = 0; j < k; ++j) {
            if (counts[j] == 0) {
                int far_i = 0;
                for (int i = 1; i < n; ++i)
                    if (d2[i] > d2[far_i]) far_i = i;
                std::memcpy(centroids.data() + static_cast<size_t>(j) * dim,
                            patches.data() + static_cast<size_t>(far_i) * dim,
                            static_cast<size_t>(dim) * sizeof(float));
                d2[far_i] = 0.0f;  // do not steal the same point twice
                prev_assign[far_i] = -1;
                continue;
            }
            float* c = centroids.data() + static_cast<size_t>(j) * dim;
            const double* s = sums.data() + static_cast<size_t>(j) * dim;
            for (int t = 0; t < dim; ++t) c[t] = static_cast<float>(s[t] / counts[j]);
        }
    }

    // pairwise-distinct invariant
    if (static_cast<int>(count_distinct(centroids, k, dim)) != k)
        throw QuantizationError("k-means produced duplicate codewords");

    Codebook cb;
    cb.codewords = std::move(centroids);
    cb.k = k;
    cb.patch_h = patch_h;
    cb.patch_w = patch_w;
    cb.fit_seed = fit_seed;
    return cb;
}

// ---------------------------------------------------------------------------
// tokenize / detokenize
// ---------------------------------------------------------------------------

TokenGrid tokenize(const Image& image, const Codebook& cb) {
    if (image.h % cb.patch_h != 0 || image.w % cb.patch_w != 0)
        throw ConfigError("image dims not divisible by codebook patch dims");
    const int rows = image.h / cb.patch_h, cols = image.w / cb.patch_w;
    const int dim = cb.dim();
    std::vector<float> patch(dim);
    TokenGrid grid;
    grid.rows = rows;
    grid.cols = cols;
    grid.k = cb.k;
    grid.tokens.resize(static_cast<size_t>(rows) * cols);
    for (int bi = 0; bi < rows; ++bi)
        for (int bj = 0; bj < cols; ++bj) {
            int t = 0;
            for (int i = 0; i < cb.patch_h; ++i)
                for (int j = 0; j < cb.patch_w; ++j) {
                    const float* p = image.px(bi * cb.patch_h + i, bj * cb.patch_w + j);
                    patch[t++] = p[0];
                    patch[t++] = p[1];
                    patch[t++] = p[2];
                }
            grid.tokens[static_cast<size_t>(bi) * cols + bj] =
                kernels::nearest_centroid(patch.data(), cb.codewords.data(), cb.k, dim);
        }
    return grid;
}

Image detokenize(const TokenGrid& grid, const Codebook& cb) {
    if (grid.has_mask()) throw IncompleteStateError("MASK token present; grid is not fully decoded");
    Image img(grid.rows * cb.patch_h, grid.cols * cb.patch_w);
    for (int bi = 0; bi < grid.rows; ++bi)
        for (int bj = 0; bj < grid.cols; ++bj) {
            const int32_t tok = grid.tokens[static_cast<size_t>(bi) * grid.cols + bj];
            if (tok < 0 || tok >= cb.k) throw ContractError("token id out of range");
            const float* cw = cb.codeword(tok);
            int t = 0;
            for (int i = 0; i < cb.patch_h; ++i)
                for (int j = 0; j < cb.patch_w; ++j) {
                    float* p = img.px(bi * cb.patch_h + i, bj * cb.patch_w + j);
                    p[0] = cw[t++];
                    p[1] = cw[t++];
                    p[2] = cw[t++];
                }
        }
    return img;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_dataset(const std::filesystem::path& root, const LabeledImageSet& set) {
    std::filesystem::create_directories(root);
    std::vector<int> per_class_idx(set.classes, 0);
    for (size_t i = 0; i < set.images.size(); ++i) {
        const int c = set.labels[i];
        char cls[32], img[32];
        std::snprintf(cls, sizeof(cls), "class_%02d", c);
        std::snprintf(img, sizeof(img), "img_%05d.png", per_class_idx[c]++);
        const std::filesystem::path dir = root / cls;
        std::filesystem::create_directories(dir);
        write_png(dir / img, set.images[i]);
    }
    json manifest = {{"count", set.images.size()},
                     {"classes", set.classes},
                     {"height", set.height},
                     {"width", set.width},
                     {"seed", set.seed}};
    std::ofstream f(root / "manifest.json");
    f << manifest.dump(2) << "\n";
}

LabeledImageSet load_dataset(const std::filesystem::path& root) {
    const std::filesystem::path mpath = root / "manifest.json";
    std::ifstream f(mpath);
    if (!f) throw IoError("missing artifact: " + mpath.string() + " (run the dataset command first)");
    json manifest = json::parse(f);
    LabeledImageSet set = ingest_image_folder(root, manifest.at("height"), manifest.at("width"));
    set.seed = manifest.at("seed");
    if (set.classes != manifest.at("classes").get<int>())
        throw IoError("dataset directory does not match manifest class count");
    if (set.images.size() != manifest.at("count").get<size_t>())
        throw IoError("dataset directory does not match manifest image count");
    return set;
}

Container codebook_to_container(const Codebook& cb) {
    Container c;
    Tensor t({cb.k, cb.dim()});
    for (size_t i = 0; i < cb.codewords.size(); ++i) t.data[i] = cb.codewords[i];
    c.tensors.emplace("codewords", std::move(t));
    c.meta["kind"] = "codebook";
    c.meta["patch_h"] = std::to_string(cb.patch_h);
    c.meta["patch_w"] = std::to_string(cb.patch_w);
    c.meta["fit_seed"] = std::to_string(cb.fit_seed);
    return c;
}

Codebook codebook_from_container(const Container& c) {
    const Tensor& t = at(c.tensors, "codewords");
    Codebook cb;
    cb.k = static_cast<int>(t.shape.at(0));
    cb.patch_h = std::stoi(c.meta.at("patch_h"));
    cb.patch_w = std::stoi(c.meta.at("patch_w"));
    cb.fit_seed = std::stoull(c.meta.at("fit_seed"));
    cb.codewords.resize(t.numel());
    for (size_t i = 0; i < t.numel(); ++i) cb.codewords[i] = static_cast<float>(t.data[i]);
    if (static_cast<int>(cb.codewords.size()) != cb.k * cb.dim())
        throw IoError("codebook container shape mismatch");
    return cb;
}

} // namespace maskgen
