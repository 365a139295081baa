#include "deepclust/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace deepclust {

namespace {

std::uint32_t read_u32_be(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw std::runtime_error("truncated file " + path);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
}

std::uint32_t read_u32_le(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw std::runtime_error("truncated file " + path);
    return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
           (std::uint32_t{b[3]} << 24);
}

void write_u32_le(std::ofstream& f, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imf(images_path, std::ios::binary);
    if (!imf) throw std::runtime_error("cannot open IDX image file " + images_path);

    const std::uint32_t magic = read_u32_be(imf, images_path);
    if (magic != kIdxImagesMagic) {
        throw std::runtime_error("bad IDX image magic at offset 0 in " + images_path);
    }
    const std::uint32_t n = read_u32_be(imf, images_path);
    const std::uint32_t h = read_u32_be(imf, images_path);
    const std::uint32_t w = read_u32_be(imf, images_path);
    if (n == 0 || h == 0 || w == 0) throw std::runtime_error("degenerate IDX dimensions in " + images_path);

    Dataset data;
    data.images = Tensor({n, 1, h, w});
    data.norm_scale = real_t{1} / 255;
    data.norm_offset = 0;
    std::vector<unsigned char> row(static_cast<std::size_t>(h) * w);
    for (std::uint32_t i = 0; i < n; ++i) {
        imf.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!imf) throw std::runtime_error("truncated IDX image data in " + images_path);
        for (std::size_t p = 0; p < row.size(); ++p) {
            data.images[static_cast<std::size_t>(i) * row.size() + p] =
                static_cast<real_t>(row[p]) * data.norm_scale;
        }
    }

    if (!labels_path.empty()) {
        std::ifstream lf(labels_path, std::ios::binary);
        if (!lf) throw std::runtime_error("cannot open IDX label file " + labels_path);
        const std::uint32_t lmagic = read_u32_be(lf, labels_path);
        if (lmagic != kIdxLabelsMagic) {
            throw std::runtime_error("bad IDX label magic at offset 0 in " + labels_path);
        }
        const std::uint32_t ln = read_u32_be(lf, labels_path);
        if (ln != n) {
            throw std::runtime_error("IDX image/label count mismatch: " + std::to_string(n) + " vs " +
                                     std::to_string(ln));
        }
        std::vector<unsigned char> raw(ln);
        lf.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!lf) throw std::runtime_error("truncated IDX label data in " + labels_path);
        data.labels.assign(raw.begin(), raw.end());
        data.has_labels = true;
    }

    data.name = std::filesystem::path(images_path).stem().string();
    return data;
}

namespace {

constexpr char kUspsMagic[4] = {'U', 'S', 'P', 'S'};
constexpr std::uint8_t kUspsVersion = 1;
enum UspsDtype : std::uint8_t { kU8 = 0, kF32 = 1, kF64 = 2 };
constexpr std::uint8_t kFlagLabels = 1;
constexpr std::uint8_t kFlagNormalized = 2;

}  // namespace

Dataset load_usps(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open USPS file " + path);

    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kUspsMagic, 4) != 0) {
        throw std::runtime_error("bad USPS magic at offset 0 in " + path);
    }
    std::uint8_t version = 0, dtype = 0, flags = 0, reserved = 0;
    f.read(reinterpret_cast<char*>(&version), 1);
    f.read(reinterpret_cast<char*>(&dtype), 1);
    f.read(reinterpret_cast<char*>(&flags), 1);
    f.read(reinterpret_cast<char*>(&reserved), 1);
    if (!f || version != kUspsVersion) throw std::runtime_error("unsupported USPS version in " + path);

    const std::uint32_t n = read_u32_le(f, path);
    const std::uint32_t h = read_u32_le(f, path);
    const std::uint32_t w = read_u32_le(f, path);
    if (n == 0 || n > 10000000 || h == 0 || w == 0) {
        throw std::runtime_error("out-of-range USPS header in " + path);
    }

    Dataset data;
    data.images = Tensor({n, 1, h, w});
    const std::size_t count = data.images.size();
    switch (dtype) {
        case kU8: {
            std::vector<unsigned char> raw(count);
            f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
            if (!f) throw std::runtime_error("truncated USPS pixel data in " + path);
            for (std::size_t i = 0; i < count; ++i) data.images[i] = static_cast<real_t>(raw[i]);
            break;
        }
        case kF32: {
            std::vector<float> raw(count);
            f.read(reinterpret_cast<char*>(raw.data()),
                   static_cast<std::streamsize>(count * sizeof(float)));
            if (!f) throw std::runtime_error("truncated USPS pixel data in " + path);
            for (std::size_t i = 0; i < count; ++i) data.images[i] = static_cast<real_t>(raw[i]);
            break;
        }
        case kF64: {
            std::vector<double> raw(count);
            f.read(reinterpret_cast<char*>(raw.data()),
                   static_cast<std::streamsize>(count * sizeof(double)));
            if (!f) throw std::runtime_error("truncated USPS pixel data in " + path);
            for (std::size_t i = 0; i < count; ++i) data.images[i] = static_cast<real_t>(raw[i]);
            break;
        }
        default:
            throw std::runtime_error("unknown USPS dtype flag in " + path);
    }

    if (flags & kFlagLabels) {
        std::vector<unsigned char> raw(n);
        f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
        if (!f) throw std::runtime_error("truncated USPS label data in " + path);
        data.labels.assign(raw.begin(), raw.end());
        data.has_labels = true;
    }

    if (flags & kFlagNormalized) {
        data.norm_scale = 1;
        data.norm_offset = 0;
    } else {
        // Affine map onto [-1, 1]: min -> -1, max -> +1.
        real_t lo = data.images[0], hi = data.images[0];
        for (std::size_t i = 1; i < count; ++i) {
            lo = std::min(lo, data.images[i]);
            hi = std::max(hi, data.images[i]);
        }
        if (hi > lo) {
            const real_t scale = 2 / (hi - lo);
            for (std::size_t i = 0; i < count; ++i) {
                data.images[i] = (data.images[i] - lo) * scale - 1;
            }
            data.norm_scale = scale;
            data.norm_offset = -lo * scale - 1;
        } else {
            for (std::size_t i = 0; i < count; ++i) data.images[i] = 0;
            data.norm_scale = 0;
            data.norm_offset = 0;
        }
    }

    data.name = std::filesystem::path(path).stem().string();
    return data;
}

void save_usps(const std::string& path, const Dataset& data, bool normalized) {
    if (data.images.ndim() != 4 || data.images.extent(1) != 1) {
        throw std::invalid_argument("save_usps: images must be (n, 1, h, w)");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write USPS file " + path);

    f.write(kUspsMagic, 4);
    const std::uint8_t version = kUspsVersion;
    const std::uint8_t dtype = kF64;
    std::uint8_t flags = 0;
    if (data.has_labels) flags |= kFlagLabels;
    if (normalized) flags |= kFlagNormalized;
    const std::uint8_t reserved = 0;
    f.write(reinterpret_cast<const char*>(&version), 1);
    f.write(reinterpret_cast<const char*>(&dtype), 1);
    f.write(reinterpret_cast<const char*>(&flags), 1);
    f.write(reinterpret_cast<const char*>(&reserved), 1);
    write_u32_le(f, static_cast<std::uint32_t>(data.images.extent(0)));
    write_u32_le(f, static_cast<std::uint32_t>(data.images.extent(2)));
    write_u32_le(f, static_cast<std::uint32_t>(data.images.extent(3)));

    for (std::size_t i = 0; i < data.images.size(); ++i) {
        const double v = static_cast<double>(data.images[i]);
        f.write(reinterpret_cast<const char*>(&v), sizeof(double));
    }
    if (data.has_labels) {
        for (std::size_t l : data.labels) {
            const unsigned char b = static_cast<unsigned char>(l);
            f.write(reinterpret_cast<const char*>(&b), 1);
        }
    }
    if (!f) throw std::runtime_error("failed writing USPS file " + path);
}

Dataset make_synthetic_blobs(std::size_t classes, std::size_t per_class, std::size_t image_size,
                             real_t sigma, std::uint64_t seed) {
    if (classes == 0 || per_class == 0 || image_size == 0) {
        throw std::invalid_argument("make_synthetic_blobs: all counts must be positive");
    }

    // One grid cell per class (shuffled) keeps templates distinct for any
    // seed; the bump center jitters inside its cell.
    std::size_t grid = 1;
    while (grid * grid < classes) ++grid;
    std::vector<std::size_t> cells(grid * grid);
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    Rng cell_rng(static_cast<Rng::result_type>(derive_seed(seed, 0xce11)));
    std::shuffle(cells.begin(), cells.end(), cell_rng);

    const real_t cell = static_cast<real_t>(image_size) / static_cast<real_t>(grid);
    std::vector<std::vector<real_t>> templates(classes);
    for (std::size_t cls = 0; cls < classes; ++cls) {
        Rng trng(static_cast<Rng::result_type>(derive_seed(seed, 0xb10b + cls)));
        std::uniform_real_distribution<real_t> jitter(real_t{0.3}, real_t{0.7});
        std::uniform_real_distribution<real_t> width_dist(cell / 4, cell / 2);
        const std::size_t cy_cell = cells[cls] / grid, cx_cell = cells[cls] % grid;
        const real_t cy = (static_cast<real_t>(cy_cell) + jitter(trng)) * cell;
        const real_t cx = (static_cast<real_t>(cx_cell) + jitter(trng)) * cell;
        const real_t width = width_dist(trng);

        templates[cls].resize(image_size * image_size);
        for (std::size_t y = 0; y < image_size; ++y) {
            for (std::size_t x = 0; x < image_size; ++x) {
                const real_t dy = static_cast<real_t>(y) - cy;
                const real_t dx = static_cast<real_t>(x) - cx;
                templates[cls][y * image_size + x] =
                    std::exp(-(dy * dy + dx * dx) / (2 * width * width));
            }
        }
    }

    const std::size_t n = classes * per_class;
    Dataset data;
    data.images = Tensor({n, 1, image_size, image_size});
    data.labels.resize(n);
    data.has_labels = true;
    data.name = "blobs";

    Rng noise_rng(static_cast<Rng::result_type>(derive_seed(seed, 0x0d5e)));
    std::normal_distribution<real_t> noise(0, 1);
    const std::size_t pixels = image_size * image_size;
    for (std::size_t cls = 0; cls < classes; ++cls) {
        for (std::size_t inst = 0; inst < per_class; ++inst) {
            const std::size_t i = cls * per_class + inst;
            data.labels[i] = cls;
            for (std::size_t p = 0; p < pixels; ++p) {
                const real_t eps = sigma > 0 ? sigma * noise(noise_rng) : real_t{0};
                data.images[i * pixels + p] = templates[cls][p] + eps;
            }
        }
    }
    return data;
}

}  // namespace deepclust
