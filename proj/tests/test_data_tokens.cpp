#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maskgen/data_tokens.hpp"
#include "maskgen/error.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>

using namespace maskgen;

namespace {

DatasetSpec tiny_spec() {
    DatasetSpec s;
    s.count = 12;
    s.classes = 3;
    s.height = 16;
    s.width = 16;
    s.seed = 7;
    return s;
}

bool images_equal(const Image& a, const Image& b) {
    return a.h == b.h && a.w == b.w &&
           std::memcmp(a.rgb.data(), b.rgb.data(), a.rgb.size() * sizeof(float)) == 0;
}

} // namespace

TEST_CASE("procedural dataset is deterministic and balanced") {
    LabeledImageSet a = generate_dataset(tiny_spec());
    LabeledImageSet b = generate_dataset(tiny_spec());
    REQUIRE(a.images.size() == 12);
    CHECK(a.classes == 3);
    for (int i = 0; i < 12; ++i) {
        CHECK(a.labels[i] == i % 3);
        CHECK(images_equal(a.images[i], b.images[i]));
    }
    for (const auto& img : a.images)
        for (float v : img.rgb) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }

    DatasetSpec other = tiny_spec();
    other.seed = 8;
    LabeledImageSet c = generate_dataset(other);
    CHECK_FALSE(images_equal(a.images[0], c.images[0]));
}

TEST_CASE("dataset save/load round trip") {
    auto dir = std::filesystem::temp_directory_path() / "maskgen_ds_test";
    std::filesystem::remove_all(dir);
    LabeledImageSet set = generate_dataset(tiny_spec());
    save_dataset(dir, set);
    CHECK(std::filesystem::exists(dir / "manifest.json"));
    LabeledImageSet loaded = load_dataset(dir);
    REQUIRE(loaded.images.size() == set.images.size());
    CHECK(loaded.classes == set.classes);
    // loading returns class-grouped order; match each image by (class,
    // within-class index) against the interleaved original
    std::vector<std::vector<size_t>> by_class(set.classes);
    for (size_t i = 0; i < set.images.size(); ++i) by_class[set.labels[i]].push_back(i);
    size_t li = 0;
    for (int c = 0; c < set.classes; ++c)
        for (size_t k = 0; k < by_class[c].size(); ++k, ++li) {
            CHECK(loaded.labels[li] == c);
            const Image& orig = set.images[by_class[c][k]];
            // PNG is 8-bit so loaded values sit on the 1/255 grid near the originals
            for (size_t p = 0; p < orig.rgb.size(); ++p)
                CHECK(std::abs(loaded.images[li].rgb[p] - orig.rgb[p]) <= 0.5f / 255.f + 1e-6f);
        }
    // a second save of the loaded set is byte-stable
    auto dir2 = std::filesystem::temp_directory_path() / "maskgen_ds_test2";
    std::filesystem::remove_all(dir2);
    save_dataset(dir2, loaded);
    LabeledImageSet loaded2 = load_dataset(dir2);
    for (size_t i = 0; i < loaded.images.size(); ++i)
        CHECK(images_equal(loaded.images[i], loaded2.images[i]));
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("codebook fitting is deterministic and validated") {
    LabeledImageSet set = generate_dataset(tiny_spec());
    Codebook cb = fit_codebook(set, 16, 4, 4, 3);
    CHECK(cb.k == 16);
    CHECK(cb.dim() == 48);
    CHECK(cb.patch_h == 4);
    Codebook cb2 = fit_codebook(set, 16, 4, 4, 3);
    CHECK(std::memcmp(cb.codewords.data(), cb2.codewords.data(),
                      cb.codewords.size() * sizeof(float)) == 0);

    // constant images have a single distinct patch
    LabeledImageSet flat;
    flat.classes = 1;
    flat.height = 8;
    flat.width = 8;
    Image img;
    img.h = 8;
    img.w = 8;
    img.rgb.assign(8 * 8 * 3, 0.5f);
    flat.images = {img, img};
    flat.labels = {0, 0};
    CHECK_THROWS_AS(fit_codebook(flat, 4, 4, 4, 0), QuantizationError);
}

TEST_CASE("tokenize inverts detokenize on codeword-built images") {
    LabeledImageSet set = generate_dataset(tiny_spec());
    Codebook cb = fit_codebook(set, 8, 4, 4, 1);

    TokenGrid g;
    g.rows = 4;
    g.cols = 4;
    g.k = cb.k;
    g.tokens = {0, 1, 2, 3, 4, 5, 6, 7, 7, 6, 5, 4, 3, 2, 1, 0};
    Image img = detokenize(g, cb);
    CHECK(img.h == 16);
    CHECK(img.w == 16);
    TokenGrid back = tokenize(img, cb);
    CHECK(back.tokens == g.tokens);
    CHECK(back.k == cb.k);
    CHECK_FALSE(back.has_mask());
}

TEST_CASE("tokenize breaks ties toward the lower index") {
    Codebook cb;
    cb.k = 3;
    cb.patch_h = 1;
    cb.patch_w = 1;
    cb.codewords = {0.9f, 0.9f, 0.9f, 0.2f, 0.2f, 0.2f, 0.9f, 0.9f, 0.9f};  // 2 duplicates 0
    Image img;
    img.h = 1;
    img.w = 2;
    img.rgb = {0.9f, 0.9f, 0.9f, 0.2f, 0.2f, 0.2f};
    TokenGrid g = tokenize(img, cb);
    CHECK(g.tokens == std::vector<int32_t>{0, 1});
}

TEST_CASE("detokenize refuses masked grids") {
    Codebook cb;
    cb.k = 2;
    cb.patch_h = 1;
    cb.patch_w = 1;
    cb.codewords = {0.f, 0.f, 0.f, 1.f, 1.f, 1.f};
    TokenGrid g;
    g.rows = 1;
    g.cols = 2;
    g.k = 2;
    g.tokens = {0, 2};  // 2 == mask id
    CHECK(g.mask_id() == 2);
    CHECK(g.has_mask());
    CHECK_THROWS_AS(detokenize(g, cb), IncompleteStateError);
}

TEST_CASE("image folder ingestion") {
    auto dir = std::filesystem::temp_directory_path() / "maskgen_ingest_test";
    std::filesystem::remove_all(dir);
    LabeledImageSet set = generate_dataset(tiny_spec());
    save_dataset(dir, set);
    LabeledImageSet in = ingest_image_folder(dir, 8, 8);
    REQUIRE(in.images.size() == set.images.size());
    CHECK(in.height == 8);
    CHECK(in.images[0].h == 8);
    CHECK(in.classes == 3);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(ingest_image_folder(dir, 8, 8), IoError);
}
