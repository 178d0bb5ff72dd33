#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gme/data.hpp"
#include "gme/image.hpp"
#include "oracle.hpp"

using gme::Image;
using gme::Rng;
using gme::Tensor;
using D = Tensor<double>;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "gme-tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

Image random_image(int w, int h, int ch, uint64_t seed) {
    Rng rng(seed);
    Image img(w, h, ch);
    for (auto& p : img.pix) p = static_cast<uint8_t>(rng.uniform_int(256));
    return img;
}

}  // namespace

TEST_CASE("gaussian kernels sum to one and sigma zero is a delta") {
    for (int k : {1, 3, 5, 9}) {
        for (double sigma : {0.0, 0.5, 1.0, 3.0}) {
            auto kern = gme::gaussian_kernel(k, sigma);
            double s = 0;
            for (double v : kern) s += v;
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    auto delta = gme::gaussian_kernel(5, 0.0);
    CHECK(delta[2] == 1.0);
    CHECK(delta[0] == 0.0);
    CHECK_THROWS_AS(gme::gaussian_kernel(4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(gme::gaussian_kernel(3, -1.0), std::invalid_argument);
}

TEST_CASE("blur with sigma zero is the identity and constants are preserved") {
    Rng rng(1);
    D x(1, 3, 6, 7);
    oracle::fill_random(x, rng, 100.0);
    D y = gme::gaussian_blur(x, 3, 0.0);
    CHECK(oracle::max_abs_diff(x, y) == 0.0);

    D c(1, 3, 8, 8);
    c.fill(123.0);
    D b = gme::gaussian_blur(c, 5, 1.5);
    for (double v : b.v) CHECK(v == doctest::Approx(123.0).epsilon(1e-12));
}

TEST_CASE("bicubic resize preserves constant images exactly at any scale") {
    D c(1, 3, 48, 48);
    c.fill(200.0);
    for (int target : {12, 14, 31, 97}) {
        D r = gme::bicubic_resize(c, target, target);
        REQUIRE(r.h == target);
        REQUIRE(r.w == target);
        for (double v : r.v) CHECK(v == doctest::Approx(200.0).epsilon(1e-12));
    }
}

TEST_CASE("bicubic resize hits the contract sizes and is the identity at scale 1") {
    Rng rng(3);
    D hr(1, 3, 112, 112);
    oracle::fill_random(hr, rng, 128.0);
    D lr = gme::bicubic_resize(hr, 14, 14);
    CHECK(lr.h == 14);
    CHECK(lr.w == 14);

    D mid(1, 3, 48, 48);
    oracle::fill_random(mid, rng, 128.0);
    CHECK(gme::bicubic_resize(mid, 12, 12).h == 12);

    D same = gme::bicubic_resize(mid, 48, 48);
    CHECK(oracle::max_abs_diff(same, mid) < 1e-12);
}

TEST_CASE("binary PNM round-trips byte-exactly for gray and color") {
    const fs::path dir = fresh_dir("pnm");
    for (int ch : {1, 3}) {
        Image img = random_image(9, 7, ch, 42 + ch);
        const fs::path p = dir / ("img" + std::to_string(ch) + ".pnm");
        gme::write_pnm(p.string(), img);
        Image back = gme::read_pnm(p.string());
        REQUIRE(back.w == img.w);
        REQUIRE(back.h == img.h);
        REQUIRE(back.ch == img.ch);
        CHECK(back.pix == img.pix);
        // rewriting produces identical bytes
        const std::string first = slurp(p);
        gme::write_pnm(p.string(), back);
        CHECK(slurp(p) == first);
    }
    CHECK_THROWS(gme::read_pnm((dir / "missing.pgm").string()));
}

TEST_CASE("toy dataset generation is deterministic and complete") {
    const fs::path a = fresh_dir("toy_a"), b = fresh_dir("toy_b");
    gme::generate_toy_dataset(a.string(), 3, 24, 7);
    gme::generate_toy_dataset(b.string(), 3, 24, 7);
    const auto& names = gme::toy_class_names();
    REQUIRE(names.size() == 7);
    for (const auto& cls : names) {
        for (int i = 0; i < 3; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "img_%04d.ppm", i);
            const fs::path fa = a / cls / buf, fb = b / cls / buf;
            REQUIRE(fs::exists(fa));
            CHECK(slurp(fa) == slurp(fb));
        }
    }
    // a different seed changes the pixels
    const fs::path c = fresh_dir("toy_c");
    gme::generate_toy_dataset(c.string(), 3, 24, 8);
    CHECK(slurp(a / names[0] / "img_0000.ppm") != slurp(c / names[0] / "img_0000.ppm"));
}

TEST_CASE("source scanning handles both layouts with stable labels") {
    const fs::path flat = fresh_dir("scan_flat");
    gme::generate_toy_dataset(flat.string(), 20, 16, 5);
    std::vector<std::string> classes;
    std::vector<gme::SourceRecord> recs;
    gme::scan_source_tree(flat.string(), classes, recs, 11);
    std::vector<std::string> want = gme::toy_class_names();
    std::sort(want.begin(), want.end());
    CHECK(classes == want);  // scanner orders classes alphabetically
    REQUIRE(recs.size() == 7 * 20);
    // stratified 90/10: exactly 2 test images per class of 20
    std::vector<int> test_per_class(7, 0);
    for (const auto& r : recs)
        if (r.split == gme::Split::test) ++test_per_class[r.label];
    for (int n : test_per_class) CHECK(n == 2);
    // the same seed reproduces the same split
    std::vector<std::string> classes2;
    std::vector<gme::SourceRecord> recs2;
    gme::scan_source_tree(flat.string(), classes2, recs2, 11);
    for (size_t i = 0; i < recs.size(); ++i) CHECK((recs[i].split == recs2[i].split));

    // explicit train/test layout
    const fs::path split = fresh_dir("scan_split");
    for (const std::string s : {"train", "test"}) {
        fs::create_directories(split / s / "happy");
        gme::write_pnm((split / s / "happy" / "a.ppm").string(), random_image(8, 8, 3, 1));
    }
    gme::scan_source_tree(split.string(), classes, recs, 0);
    REQUIRE(classes == std::vector<std::string>{"happy"});
    REQUIRE(recs.size() == 2);
    CHECK((recs[0].split == gme::Split::train));
    CHECK((recs[1].split == gme::Split::test));

    CHECK_THROWS_AS(gme::scan_source_tree((split / "nope").string(), classes, recs, 0),
                    std::invalid_argument);
}

TEST_CASE("fabricated LR datasets are byte-reproducible and match the degradation oracle") {
    const fs::path src = fresh_dir("fab_src");
    gme::generate_toy_dataset(src.string(), 4, 48, 21);
    gme::DegradationSpec spec;
    spec.target_size = 12;

    const fs::path out1 = fresh_dir("fab_out1"), out2 = fresh_dir("fab_out2");
    auto r1 = gme::generate_lr_dataset(src.string(), spec, out1.string(), 3);
    auto r2 = gme::generate_lr_dataset(src.string(), spec, out2.string(), 3);
    CHECK(r1.errors.empty());
    REQUIRE(r1.manifest.records.size() == 7 * 4);
    CHECK(r1.manifest.hr_size == 48);
    CHECK(r1.manifest.lr_size == 12);

    for (const auto& rec : r1.manifest.records) {
        const fs::path lr1 = out1 / rec.lr_path, lr2 = out2 / rec.lr_path;
        REQUIRE(fs::exists(lr1));
        CHECK(slurp(lr1) == slurp(lr2));
        // independent re-degradation of the source reproduces the stored bytes
        Image hr = gme::read_pnm((src / rec.hr_path).string());
        Image want = gme::bicubic_resize(hr, 12, 12);
        Image got = gme::read_pnm(lr1.string());
        CHECK(got.pix == want.pix);
        CHECK(got.w == 12);
        CHECK(got.h == 12);
    }

    // normalization statistics come from real pixels
    for (int c = 0; c < 3; ++c) {
        CHECK(r1.manifest.mean[c] > 0.0);
        CHECK(r1.manifest.mean[c] < 1.0);
        CHECK(r1.manifest.stddev[c] > 0.0);
    }
}

TEST_CASE("manifests survive a write/read round trip") {
    const fs::path src = fresh_dir("man_src");
    gme::generate_toy_dataset(src.string(), 2, 32, 33);
    gme::DegradationSpec spec;
    spec.target_size = 8;
    const fs::path out = fresh_dir("man_out");
    auto res = gme::generate_lr_dataset(src.string(), spec, out.string(), 1);

    const fs::path mf = fresh_dir("man") / "manifest.txt";
    gme::write_manifest(mf.string(), res.manifest);
    gme::Manifest back = gme::read_manifest(mf.string());
    CHECK(back.class_names == res.manifest.class_names);
    CHECK(back.hr_size == res.manifest.hr_size);
    CHECK(back.lr_size == res.manifest.lr_size);
    CHECK(back.hr_root == res.manifest.hr_root);
    CHECK(back.lr_root == res.manifest.lr_root);
    CHECK(back.spec.target_size == res.manifest.spec.target_size);
    CHECK(back.spec.blur_sigma == res.manifest.spec.blur_sigma);
    for (int c = 0; c < 3; ++c) {
        CHECK(back.mean[c] == doctest::Approx(res.manifest.mean[c]).epsilon(1e-15));
        CHECK(back.stddev[c] == doctest::Approx(res.manifest.stddev[c]).epsilon(1e-15));
    }
    REQUIRE(back.records.size() == res.manifest.records.size());
    for (size_t i = 0; i < back.records.size(); ++i) {
        CHECK(back.records[i].hr_path == res.manifest.records[i].hr_path);
        CHECK(back.records[i].lr_path == res.manifest.records[i].lr_path);
        CHECK(back.records[i].label == res.manifest.records[i].label);
        CHECK((back.records[i].split == res.manifest.records[i].split));
    }
}

TEST_CASE("student input preparation normalizes with the manifest statistics") {
    Image lr(6, 6, 3);
    for (auto& p : lr.pix) p = 102;  // constant 0.4 after scaling
    gme::DegradationSpec spec;
    spec.target_size = 6;
    spec.blur_kernel = 3;
    spec.blur_sigma = 1.0;
    std::array<double, 3> mean{0.5, 0.4, 0.3}, stddev{0.25, 0.2, 0.1};
    auto t = gme::prepare_student_input<double>(lr, 16, 16, spec, mean, stddev);
    REQUIRE(t.b == 1);
    REQUIRE(t.c == 3);
    REQUIRE(t.h == 16);
    REQUIRE(t.w == 16);
    for (int c = 0; c < 3; ++c) {
        const double want = (102.0 / 255.0 - mean[c]) / stddev[c];
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                CHECK(t.at(0, c, y, x) == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("paired loader batches deterministically and keeps flips aligned") {
    const fs::path src = fresh_dir("loader_src");
    gme::generate_toy_dataset(src.string(), 2, 32, 55);  // 14 images total
    gme::DegradationSpec spec;
    spec.target_size = 8;
    const fs::path out = fresh_dir("loader_out");
    auto res = gme::generate_lr_dataset(src.string(), spec, out.string(), 9);

    gme::LoaderOptions opts;
    opts.batch = 5;
    opts.seed = 1234;
    opts.input_h = 16;
    opts.input_w = 16;
    gme::PairedLoader<double> loader(res.manifest, opts);
    const int ntrain = static_cast<int>(loader.train_indices().size());
    const int ntest = static_cast<int>(loader.test_indices().size());
    CHECK(ntrain + ntest == 14);

    auto plans = loader.plan_epoch(0);
    int seen = 0;
    for (size_t i = 0; i < plans.size(); ++i) {
        const int expect = std::min(5, ntrain - seen);
        CHECK(static_cast<int>(plans[i].records.size()) == expect);
        seen += expect;
    }
    CHECK(seen == ntrain);

    // replanning the same epoch gives the identical order and flips
    auto plans2 = loader.plan_epoch(0);
    REQUIRE(plans2.size() == plans.size());
    for (size_t i = 0; i < plans.size(); ++i) {
        CHECK(plans[i].records == plans2[i].records);
        CHECK(plans[i].flip == plans2[i].flip);
    }
    // a different epoch reshuffles
    auto plans_e1 = loader.plan_epoch(1);
    bool differs = false;
    for (size_t i = 0; i < plans.size() && !differs; ++i)
        differs = plans[i].records != plans_e1[i].records;
    CHECK(differs);

    // flips touch teacher and student identically: flipping the batch inputs
    // back must reproduce the unflipped load
    gme::BatchPlan noflip = plans[0], flip = plans[0];
    for (size_t i = 0; i < noflip.flip.size(); ++i) {
        noflip.flip[i] = false;
        flip.flip[i] = true;
    }
    auto bn = loader.load(noflip);
    auto bf = loader.load(flip);
    CHECK(bn.labels == bf.labels);
    for (int n = 0; n < bn.hr_images.b; ++n)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x) {
                    CHECK(bn.hr_images.at(n, c, y, x) ==
                          bf.hr_images.at(n, c, y, 15 - x));
                    CHECK(bn.lr_images.at(n, c, y, x) ==
                          bf.lr_images.at(n, c, y, 15 - x));
                }
}
