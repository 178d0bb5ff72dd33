#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gme/image.hpp"
#include "gme/tensor.hpp"

namespace gme {

namespace fs = std::filesystem;

struct DegradationSpec {
    int target_size = 14;     // LR side length, bicubic downscale target
    int blur_kernel = 3;      // odd
    double blur_sigma = 1.0;  // 0 disables the blur

    void validate() const {
        if (target_size < 1) throw std::invalid_argument("DegradationSpec: target_size < 1");
        if (blur_kernel < 1 || blur_kernel % 2 == 0)
            throw std::invalid_argument("DegradationSpec: blur_kernel must be odd");
        if (blur_sigma < 0) throw std::invalid_argument("DegradationSpec: negative blur_sigma");
    }
};

enum class Split { train, test };

struct ManifestRecord {
    std::string hr_path;  // relative to hr_root
    std::string lr_path;  // relative to lr_root
    int label = 0;
    Split split = Split::train;
};

struct Manifest {
    std::vector<std::string> class_names;
    int hr_size = 0;
    int lr_size = 0;
    std::array<double, 3> mean{0.5, 0.5, 0.5};
    std::array<double, 3> stddev{0.25, 0.25, 0.25};
    DegradationSpec spec;
    std::string hr_root, lr_root;
    std::vector<ManifestRecord> records;

    void validate() const {
        if (class_names.empty()) throw std::invalid_argument("Manifest: no classes");
        if (lr_size >= hr_size)
            throw std::invalid_argument("Manifest: lr_size must be < hr_size");
        for (const auto& r : records)
            if (r.label < 0 || r.label >= static_cast<int>(class_names.size()))
                throw std::invalid_argument("Manifest: label out of range for " + r.hr_path);
    }
};

// ---------------------------------------------------------------------------
// Manifest file: small versioned text header + one tab-separated record per
// line.
// ---------------------------------------------------------------------------

inline void write_manifest(const std::string& path, const Manifest& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("manifest: cannot write " + path);
    out << "gme-manifest v1\n";
    out << "classes";
    for (const auto& c : m.class_names) out << "\t" << c;
    out << "\n";
    out << "hr_size " << m.hr_size << "\nlr_size " << m.lr_size << "\n";
    out.precision(17);
    out << "mean " << m.mean[0] << " " << m.mean[1] << " " << m.mean[2] << "\n";
    out << "std " << m.stddev[0] << " " << m.stddev[1] << " " << m.stddev[2] << "\n";
    out << "spec bicubic " << m.spec.target_size << " " << m.spec.blur_kernel << " "
        << m.spec.blur_sigma << "\n";
    out << "hr_root " << m.hr_root << "\nlr_root " << m.lr_root << "\n";
    out << "records " << m.records.size() << "\n";
    for (const auto& r : m.records)
        out << r.hr_path << "\t" << r.lr_path << "\t" << r.label << "\t"
            << (r.split == Split::train ? "train" : "test") << "\n";
    if (!out) throw std::runtime_error("manifest: write failed for " + path);
}

inline Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path);
    Manifest m;
    std::string line;
    std::getline(in, line);
    if (line != "gme-manifest v1")
        throw std::runtime_error("manifest: bad magic in " + path);
    auto expect = [&](const std::string& key) {
        if (!std::getline(in, line) || line.rfind(key, 0) != 0)
            throw std::runtime_error("manifest: expected '" + key + "' in " + path);
        return line.size() > key.size() ? line.substr(key.size() + 1) : std::string();
    };
    {
        std::stringstream ss(expect("classes"));
        std::string tok;
        while (std::getline(ss, tok, '\t'))
            if (!tok.empty()) m.class_names.push_back(tok);
    }
    m.hr_size = std::stoi(expect("hr_size"));
    m.lr_size = std::stoi(expect("lr_size"));
    {
        std::stringstream ss(expect("mean"));
        ss >> m.mean[0] >> m.mean[1] >> m.mean[2];
    }
    {
        std::stringstream ss(expect("std"));
        ss >> m.stddev[0] >> m.stddev[1] >> m.stddev[2];
    }
    {
        std::stringstream ss(expect("spec"));
        std::string method;
        ss >> method >> m.spec.target_size >> m.spec.blur_kernel >> m.spec.blur_sigma;
        if (method != "bicubic")
            throw std::runtime_error("manifest: unknown degradation method " + method);
    }
    m.hr_root = expect("hr_root");
    m.lr_root = expect("lr_root");
    const size_t n = std::stoul(expect("records"));
    for (size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line))
            throw std::runtime_error("manifest: truncated record list in " + path);
        std::stringstream ss(line);
        ManifestRecord r;
        std::string label, split;
        std::getline(ss, r.hr_path, '\t');
        std::getline(ss, r.lr_path, '\t');
        std::getline(ss, label, '\t');
        std::getline(ss, split, '\t');
        r.label = std::stoi(label);
        r.split = split == "test" ? Split::test : Split::train;
        m.records.push_back(r);
    }
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Source tree scanning. Accepted layouts:
//   <root>/<split>/<class>/<image>   (split in {train, test})
//   <root>/<class>/<image>           (split assigned stratified 90/10, seeded)
// ---------------------------------------------------------------------------

struct SourceRecord {
    std::string rel_path;
    int label = 0;
    Split split = Split::train;
};

inline std::vector<std::string> sorted_subdirs(const fs::path& root) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<std::string> sorted_files(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

inline void scan_source_tree(const std::string& root, std::vector<std::string>& class_names,
                             std::vector<SourceRecord>& records, uint64_t seed,
                             double test_fraction = 0.1) {
    if (!fs::is_directory(root))
        throw std::invalid_argument("source directory does not exist: " + root);
    std::vector<std::string> top = sorted_subdirs(root);
    const bool has_splits =
        std::find(top.begin(), top.end(), "train") != top.end() &&
        std::find(top.begin(), top.end(), "test") != top.end();
    class_names.clear();
    records.clear();
    if (has_splits) {
        class_names = sorted_subdirs(fs::path(root) / "train");
        for (const std::string split : {"train", "test"})
            for (size_t li = 0; li < class_names.size(); ++li) {
                const fs::path dir = fs::path(root) / split / class_names[li];
                if (!fs::is_directory(dir)) continue;
                for (const auto& f : sorted_files(dir))
                    records.push_back({split + "/" + class_names[li] + "/" + f,
                                       static_cast<int>(li),
                                       split == std::string("test") ? Split::test
                                                                    : Split::train});
            }
    } else {
        class_names = top;
        // stratified seeded split, per class
        Rng rng(seed ^ 0x5eedu);
        for (size_t li = 0; li < class_names.size(); ++li) {
            const fs::path dir = fs::path(root) / class_names[li];
            std::vector<std::string> files = sorted_files(dir);
            std::vector<int> order(files.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            rng.shuffle(order);
            const size_t ntest = static_cast<size_t>(files.size() * test_fraction + 0.5);
            std::vector<bool> is_test(files.size(), false);
            for (size_t i = 0; i < ntest; ++i) is_test[order[i]] = true;
            for (size_t i = 0; i < files.size(); ++i)
                records.push_back({class_names[li] + "/" + files[i], static_cast<int>(li),
                                   is_test[i] ? Split::test : Split::train});
        }
    }
    if (records.empty()) throw std::runtime_error("source tree is empty: " + root);
}

// ---------------------------------------------------------------------------
// LR dataset fabrication: bicubic downscale of every source image, written as
// lossless PNM mirroring the source layout under <root>_lr<target> (or an
// explicit output root). Unreadable files are recorded and skipped.
// ---------------------------------------------------------------------------

struct GenerationResult {
    Manifest manifest;
    std::vector<std::string> errors;  // unreadable/undersized source files
};

inline GenerationResult generate_lr_dataset(const std::string& src_root,
                                            const DegradationSpec& spec,
                                            const std::string& out_root_arg,
                                            uint64_t seed) {
    spec.validate();
    std::vector<std::string> class_names;
    std::vector<SourceRecord> records;
    scan_source_tree(src_root, class_names, records, seed);

    const std::string out_root =
        out_root_arg.empty()
            ? src_root + "_lr" + std::to_string(spec.target_size)
            : out_root_arg;
    GenerationResult res;
    Manifest& m = res.manifest;
    m.class_names = class_names;
    m.lr_size = spec.target_size;
    m.spec = spec;
    m.hr_root = src_root;
    m.lr_root = out_root;

    // Pass 1: degrade and write. Per-channel stats accumulate over the train
    // split of the HR sources.
    double sum[3] = {0, 0, 0}, sum2[3] = {0, 0, 0};
    long long count = 0;
    for (const auto& r : records) {
        const fs::path src = fs::path(src_root) / r.rel_path;
        Image img;
        try {
            img = read_pnm(src.string());
        } catch (const std::exception& e) {
            res.errors.push_back(std::string(e.what()));
            continue;
        }
        if (m.hr_size == 0) m.hr_size = std::max(img.h, img.w);
        std::string lr_rel = r.rel_path;
        // normalize extension: always .ppm/.pgm matching channel count
        const size_t dot = lr_rel.rfind('.');
        if (dot != std::string::npos) lr_rel.resize(dot);
        lr_rel += img.ch == 3 ? ".ppm" : ".pgm";
        const fs::path dst = fs::path(out_root) / lr_rel;
        fs::create_directories(dst.parent_path());
        write_pnm(dst.string(), bicubic_resize(img, spec.target_size, spec.target_size));
        if (r.split == Split::train) {
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x)
                    for (int c = 0; c < 3; ++c)
                        {
                            const double v = img.at(y, x, img.ch == 3 ? c : 0) / 255.0;
                            sum[c] += v;
                            sum2[c] += v * v;
                        }
            count += static_cast<long long>(img.h) * img.w;
        }
        m.records.push_back({r.rel_path, lr_rel, r.label, r.split});
    }
    if (m.records.empty())
        throw std::runtime_error("generate_lr_dataset: no readable source images under " +
                                 src_root);
    if (count > 0)
        for (int c = 0; c < 3; ++c) {
            m.mean[c] = sum[c] / count;
            const double var = sum2[c] / count - m.mean[c] * m.mean[c];
            m.stddev[c] = std::sqrt(var > 1e-12 ? var : 1e-12);
        }
    m.validate();
    return res;
}

// ---------------------------------------------------------------------------
// Built-in synthetic 7-class dataset: class-dependent geometric patterns plus
// seeded noise, coarse enough to survive aggressive downscaling.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& toy_class_names() {
    static const std::vector<std::string> names = {
        "bands_h", "bands_v", "bands_d", "disk", "cross", "checker", "ramp"};
    return names;
}

inline Image render_toy_image(int cls, int size, Rng& rng) {
    Image img(size, size, 3);
    const double period = size / 4.0 * (0.8 + 0.4 * rng.uniform());
    const double phase = rng.uniform();
    const double base = 60.0 + 80.0 * rng.uniform();
    const double amp = 70.0 + 40.0 * rng.uniform();
    const double cx = size * (0.4 + 0.2 * rng.uniform());
    const double cy = size * (0.4 + 0.2 * rng.uniform());
    const double radius = size * (0.25 + 0.1 * rng.uniform());
    const double tint[3] = {0.9 + 0.2 * rng.uniform(), 0.9 + 0.2 * rng.uniform(),
                            0.9 + 0.2 * rng.uniform()};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double v = 0.0;
            switch (cls) {
                case 0: v = std::sin(2 * 3.14159265358979 * (y / period + phase)); break;
                case 1: v = std::sin(2 * 3.14159265358979 * (x / period + phase)); break;
                case 2:
                    v = std::sin(2 * 3.14159265358979 * ((x + y) / (1.4142 * period) + phase));
                    break;
                case 3: {
                    const double d = std::hypot(x - cx, y - cy);
                    v = d < radius ? 1.0 : -1.0;
                    break;
                }
                case 4: {
                    const double band = size / 6.0;
                    v = (std::fabs(x - cx) < band || std::fabs(y - cy) < band) ? 1.0 : -1.0;
                    break;
                }
                case 5: {
                    const int px = static_cast<int>(x / period + phase * 4);
                    const int py = static_cast<int>(y / period + phase * 4);
                    v = ((px + py) % 2 == 0) ? 1.0 : -1.0;
                    break;
                }
                default: v = 2.0 * (x + y) / (2.0 * size) - 1.0; break;
            }
            const double noisy = base + amp * v + 18.0 * (rng.uniform() - 0.5);
            for (int c = 0; c < 3; ++c) {
                const double pv = noisy * tint[c];
                img.at(y, x, c) = static_cast<uint8_t>(pv < 0 ? 0 : pv > 255 ? 255 : pv);
            }
        }
    return img;
}

// Writes <dir>/<class>/img_%04d.ppm for each of the 7 toy classes.
inline void generate_toy_dataset(const std::string& dir, int images_per_class, int hr_size,
                                 uint64_t seed) {
    if (images_per_class < 1)
        throw std::invalid_argument("generate_toy_dataset: images_per_class < 1");
    Rng rng(seed ^ 0x70ff5e7u);
    const auto& names = toy_class_names();
    for (size_t cls = 0; cls < names.size(); ++cls) {
        const fs::path cdir = fs::path(dir) / names[cls];
        fs::create_directories(cdir);
        for (int i = 0; i < images_per_class; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "img_%04d.ppm", i);
            write_pnm((cdir / buf).string(),
                      render_toy_image(static_cast<int>(cls), hr_size, rng));
        }
    }
}

// ---------------------------------------------------------------------------
// Paired HR/LR loading
// ---------------------------------------------------------------------------

template <typename T>
struct DistillationBatch {
    Tensor<T> hr_images;       // (B,3,in,in), normalized
    Tensor<T> lr_images;       // degraded-upscaled-blurred student input
    std::vector<int> labels;
};

struct LoaderOptions {
    int batch = 64;
    uint64_t seed = 0;
    bool augment_flip = true;  // train split only
    bool fail_fast = true;     // false: skip missing files with a warning
    int input_h = 112, input_w = 112;
};

struct BatchPlan {
    std::vector<int> records;   // indices into manifest.records
    std::vector<bool> flip;
};

// Interpolated upscale to the network input, Gaussian blur, then per-channel
// normalization to the training statistics.
template <typename T>
Tensor<T> prepare_student_input(const Image& lr, int input_h, int input_w,
                                const DegradationSpec& spec,
                                const std::array<double, 3>& mean,
                                const std::array<double, 3>& stddev) {
    spec.validate();
    Tensor<double> p = bicubic_resize(image_to_plane(lr), input_h, input_w);
    p = gaussian_blur(p, spec.blur_kernel, spec.blur_sigma);
    Tensor<T> out(1, 3, input_h, input_w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < input_h; ++y)
            for (int x = 0; x < input_w; ++x)
                out.at(0, c, y, x) = static_cast<T>(
                    (p.at(0, p.c == 3 ? c : 0, y, x) / 255.0 - mean[c]) / stddev[c]);
    return out;
}

template <typename T>
Tensor<T> prepare_teacher_input(const Image& hr, int input_h, int input_w,
                                const std::array<double, 3>& mean,
                                const std::array<double, 3>& stddev) {
    Tensor<double> p = image_to_plane(hr);
    if (p.h != input_h || p.w != input_w) p = bicubic_resize(p, input_h, input_w);
    Tensor<T> out(1, 3, input_h, input_w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < input_h; ++y)
            for (int x = 0; x < input_w; ++x)
                out.at(0, c, y, x) = static_cast<T>(
                    (p.at(0, p.c == 3 ? c : 0, y, x) / 255.0 - mean[c]) / stddev[c]);
    return out;
}

template <typename T>
class PairedLoader {
public:
    PairedLoader(Manifest manifest, LoaderOptions opts)
        : m_(std::move(manifest)), opts_(opts) {
        for (size_t i = 0; i < m_.records.size(); ++i)
            (m_.records[i].split == Split::train ? train_idx_ : test_idx_)
                .push_back(static_cast<int>(i));
    }

    const Manifest& manifest() const { return m_; }
    const std::vector<int>& train_indices() const { return train_idx_; }
    const std::vector<int>& test_indices() const { return test_idx_; }

    // Seeded shuffle per epoch; last partial batch kept. Flip decisions are
    // fixed by the plan so HR and LR stay aligned.
    std::vector<BatchPlan> plan_epoch(int epoch) const {
        Rng rng(opts_.seed * 0x100000001b3ull + static_cast<uint64_t>(epoch) + 1);
        std::vector<int> order = train_idx_;
        rng.shuffle(order);
        std::vector<BatchPlan> plans;
        for (size_t i = 0; i < order.size(); i += opts_.batch) {
            BatchPlan p;
            for (size_t j = i; j < order.size() && j < i + opts_.batch; ++j) {
                p.records.push_back(order[j]);
                p.flip.push_back(opts_.augment_flip && rng.uniform() < 0.5);
            }
            plans.push_back(std::move(p));
        }
        return plans;
    }

    BatchPlan plan_eval(const std::vector<int>& indices, size_t from, size_t count) const {
        BatchPlan p;
        for (size_t i = from; i < indices.size() && i < from + count; ++i) {
            p.records.push_back(indices[i]);
            p.flip.push_back(false);
        }
        return p;
    }

    DistillationBatch<T> load(const BatchPlan& plan) const {
        DistillationBatch<T> out;
        std::vector<Tensor<T>> hrs, lrs;
        for (size_t i = 0; i < plan.records.size(); ++i) {
            const ManifestRecord& r = m_.records[plan.records[i]];
            Image hr, lr;
            try {
                hr = read_pnm((fs::path(m_.hr_root) / r.hr_path).string());
                lr = read_pnm((fs::path(m_.lr_root) / r.lr_path).string());
            } catch (const std::exception& e) {
                if (opts_.fail_fast) throw;
                std::cerr << "warning: skipping record: " << e.what() << "\n";
                continue;
            }
            Tensor<T> ht = prepare_teacher_input<T>(hr, opts_.input_h, opts_.input_w,
                                                    m_.mean, m_.stddev);
            Tensor<T> lt = prepare_student_input<T>(lr, opts_.input_h, opts_.input_w,
                                                    m_.spec, m_.mean, m_.stddev);
            if (plan.flip[i]) {
                flip_h(ht);
                flip_h(lt);
            }
            hrs.push_back(std::move(ht));
            lrs.push_back(std::move(lt));
            out.labels.push_back(r.label);
        }
        if (hrs.empty()) throw std::runtime_error("PairedLoader: batch came up empty");
        out.hr_images = stack(hrs);
        out.lr_images = stack(lrs);
        return out;
    }

private:
    static void flip_h(Tensor<T>& t) {
        for (int c = 0; c < t.c; ++c)
            for (int y = 0; y < t.h; ++y)
                for (int x = 0; x < t.w / 2; ++x)
                    std::swap(t.at(0, c, y, x), t.at(0, c, y, t.w - 1 - x));
    }

    static Tensor<T> stack(const std::vector<Tensor<T>>& xs) {
        Tensor<T> out(static_cast<int>(xs.size()), xs[0].c, xs[0].h, xs[0].w);
        const size_t n = xs[0].size();
        for (size_t i = 0; i < xs.size(); ++i)
            std::copy(xs[i].v.begin(), xs[i].v.end(), out.v.begin() + i * n);
        return out;
    }

    Manifest m_;
    LoaderOptions opts_;
    std::vector<int> train_idx_, test_idx_;
};

}  // namespace gme
