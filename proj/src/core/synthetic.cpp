#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor_file.hpp"

namespace scseg {

void DatasetSpec::validate() const {
    if (num_train < 1 || num_val < 1 || num_test < 1)
        throw ConfigError("data: split sizes must be >= 1");
    if (image_size < 16 || image_size % 16 != 0)
        throw ConfigError("data: image_size must be a positive multiple of 16, got " +
                          std::to_string(image_size));
    if (num_classes < 2) throw ConfigError("data: num_classes must be >= 2");
    if (shapes_min < 1 || shapes_max < shapes_min)
        throw ConfigError("data: need 1 <= shapes_min <= shapes_max");
    if (intensity_separation <= 0.0 || intensity_separation > 1.0)
        throw ConfigError("data: intensity_separation must be in (0, 1]");
    if (noise_std < 0.0) throw ConfigError("data: noise_std must be >= 0");
    if (class_size_skew < 1.0) throw ConfigError("data: class_size_skew must be >= 1");
    if (label_corruption < 0.0 || label_corruption >= 1.0)
        throw ConfigError("data: label_corruption must be in [0, 1)");
}

const std::vector<SegmentationSample>& Dataset::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

namespace {

SegmentationSample make_sample(Rng& rng, const DatasetSpec& spec, int64_t extra_shapes) {
    const int64_t H = spec.image_size, W = spec.image_size;
    const int64_t K = spec.num_classes;
    SegmentationSample s{Tensor({1, H, W}), IntTensor({H, W})};

    const int64_t lo = spec.shapes_min + extra_shapes;
    const int64_t hi = spec.shapes_max + extra_shapes;
    const int64_t nshapes = lo + rng.below(hi - lo + 1);
    for (int64_t i = 0; i < nshapes; ++i) {
        const int64_t c = 1 + rng.below(K - 1);
        const bool disc = rng.uniform01() < 0.5;
        const double base = double(H) * rng.uniform(0.12, 0.28);
        const double size = base * std::pow(spec.class_size_skew, -0.5 * double(c));
        const double cy = rng.uniform(0.0, double(H));
        const double cx = rng.uniform(0.0, double(W));
        const double ry = disc ? size : size * rng.uniform(0.7, 1.3);
        const double rx = disc ? size : size * rng.uniform(0.7, 1.3);
        const double intensity = spec.intensity_separation * double(c) / double(K - 1);

        const int64_t y0 = std::max<int64_t>(0, int64_t(std::floor(cy - ry)));
        const int64_t y1 = std::min<int64_t>(H - 1, int64_t(std::ceil(cy + ry)));
        const int64_t x0 = std::max<int64_t>(0, int64_t(std::floor(cx - rx)));
        const int64_t x1 = std::min<int64_t>(W - 1, int64_t(std::ceil(cx + rx)));
        for (int64_t y = y0; y <= y1; ++y) {
            for (int64_t x = x0; x <= x1; ++x) {
                bool inside;
                if (disc) {
                    const double dy = (double(y) - cy) / ry, dx = (double(x) - cx) / rx;
                    inside = dy * dy + dx * dx <= 1.0;
                } else {
                    inside = std::fabs(double(y) - cy) <= ry && std::fabs(double(x) - cx) <= rx;
                }
                if (inside) {
                    s.label[y * W + x] = uint32_t(c);
                    s.image[y * W + x] = intensity;
                }
            }
        }
    }

    if (spec.noise_std > 0.0) {
        for (int64_t i = 0; i < H * W; ++i) {
            const double v = s.image[i] + rng.normal(0.0, spec.noise_std);
            s.image[i] = std::clamp(v, 0.0, 1.0);
        }
    }
    return s;
}

std::vector<SegmentationSample> make_split(const DatasetSpec& spec, const std::string& name,
                                           int64_t count, bool corrupt, int64_t attempt) {
    Rng rng(mix_seed(spec.seed, name + "#" + std::to_string(attempt)));
    std::vector<SegmentationSample> out;
    out.reserve(size_t(count));
    for (int64_t i = 0; i < count; ++i) out.push_back(make_sample(rng, spec, attempt));
    if (corrupt && spec.label_corruption > 0.0) {
        // Separate stream so corrupted and clean runs share the same geometry.
        Rng crng(mix_seed(spec.seed, name + "#corrupt"));
        for (SegmentationSample& s : out) {
            for (int64_t i = 0; i < s.label.numel(); ++i)
                if (crng.uniform01() < spec.label_corruption)
                    s.label[i] = uint32_t(crng.below(spec.num_classes));
        }
    }
    return out;
}

bool all_classes_present(const std::vector<SegmentationSample>& samples, int64_t K) {
    std::vector<bool> seen(size_t(K), false);
    for (const SegmentationSample& s : samples)
        for (int64_t i = 0; i < s.label.numel(); ++i) seen[s.label[i]] = true;
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

} // namespace

Dataset generate_synthetic_dataset(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;

    constexpr int64_t kMaxAttempts = 8;
    int64_t attempt = 0;
    for (; attempt < kMaxAttempts; ++attempt) {
        ds.train = make_split(spec, "train", spec.num_train, true, attempt);
        if (all_classes_present(ds.train, spec.num_classes)) break;
    }
    if (attempt == kMaxAttempts)
        throw ConfigError("dataset generation failed: some class never appeared in the training "
                          "split after " +
                          std::to_string(kMaxAttempts) +
                          " attempts (seed " + std::to_string(spec.seed) + ", " +
                          std::to_string(spec.num_classes) + " classes)");
    ds.val = make_split(spec, "val", spec.num_val, false, 0);
    ds.test = make_split(spec, "test", spec.num_test, false, 0);
    return ds;
}

std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch_size, uint64_t seed,
                                                int64_t epoch) {
    if (n < 1) throw ConfigError("batch_indices: empty split");
    if (batch_size < 1) throw ConfigError("batch_indices: batch_size must be >= 1");
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t(0));
    Rng rng(seed ^ uint64_t(epoch));
    rng.shuffle(order);
    std::vector<std::vector<int64_t>> batches;
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

Tensor stack_images(const std::vector<SegmentationSample>& samples,
                    const std::vector<int64_t>& indices) {
    if (indices.empty()) throw ShapeError("stack_images: empty batch");
    const Tensor& first = samples[size_t(indices[0])].image;
    const int64_t H = first.extent(1), W = first.extent(2);
    Tensor batch({int64_t(indices.size()), 1, H, W});
    for (size_t b = 0; b < indices.size(); ++b) {
        const Tensor& img = samples[size_t(indices[b])].image;
        std::copy(img.data(), img.data() + H * W, batch.data() + int64_t(b) * H * W);
    }
    return batch;
}

IntTensor stack_labels(const std::vector<SegmentationSample>& samples,
                       const std::vector<int64_t>& indices) {
    if (indices.empty()) throw ShapeError("stack_labels: empty batch");
    const IntTensor& first = samples[size_t(indices[0])].label;
    const int64_t H = first.extent(0), W = first.extent(1);
    IntTensor batch({int64_t(indices.size()), H, W});
    for (size_t b = 0; b < indices.size(); ++b) {
        const IntTensor& lab = samples[size_t(indices[b])].label;
        std::copy(lab.data(), lab.data() + H * W, batch.data() + int64_t(b) * H * W);
    }
    return batch;
}

void write_dataset_split(const std::string& path,
                         const std::vector<SegmentationSample>& samples) {
    std::vector<TensorFileEntry> entries;
    entries.reserve(samples.size() * 2);
    for (size_t i = 0; i < samples.size(); ++i) {
        entries.push_back({"image/" + std::to_string(i), samples[i].image});
        entries.push_back({"label/" + std::to_string(i), samples[i].label});
    }
    write_tensor_file(path, entries);
}

std::vector<SegmentationSample> read_dataset_split(const std::string& path) {
    const std::vector<TensorFileEntry> entries = read_tensor_file(path);
    if (entries.size() % 2 != 0)
        throw IoError("'" + path + "' is not a dataset split (odd entry count)");
    const size_t n = entries.size() / 2;
    std::vector<SegmentationSample> samples(n);
    std::vector<bool> have_img(n, false), have_lab(n, false);
    for (const TensorFileEntry& e : entries) {
        const bool is_img = e.name.rfind("image/", 0) == 0;
        const bool is_lab = e.name.rfind("label/", 0) == 0;
        if (!is_img && !is_lab)
            throw IoError("'" + path + "' has unexpected entry '" + e.name + "'");
        const size_t i = size_t(std::stoull(e.name.substr(6)));
        if (i >= n) throw IoError("'" + path + "' has out-of-range entry '" + e.name + "'");
        if (is_img) {
            samples[i].image = std::get<Tensor>(e.value);
            have_img[i] = true;
        } else {
            samples[i].label = std::get<IntTensor>(e.value);
            have_lab[i] = true;
        }
    }
    for (size_t i = 0; i < n; ++i)
        if (!have_img[i] || !have_lab[i])
            throw IoError("'" + path + "' is missing image or label " + std::to_string(i));
    return samples;
}

} // namespace scseg
