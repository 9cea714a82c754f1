#include "neuralscale/dataset.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "neuralscale/errors.hpp"
#include "neuralscale/rng.hpp"

namespace neuralscale {

void validate_dataset(const Dataset& data) {
    require(data.num_classes >= 1, ErrorKind::Domain, "dataset needs at least one class");
    require(data.shape.channels >= 1 && data.shape.height >= 1 && data.shape.width >= 1, ErrorKind::Domain,
            "dataset shape must be positive");
    const auto check = [&](const Split& s, const char* name) {
        require(!s.empty(), ErrorKind::Domain, std::string(name) + " split is empty");
        require(s.features.size() == s.size() * data.sample_size(), ErrorKind::Domain,
                std::string(name) + " split: feature count does not match labels");
        for (int y : s.labels)
            require(y >= 0 && y < data.num_classes, ErrorKind::Domain,
                    std::string(name) + " split: label out of range");
    };
    check(data.train, "train");
    check(data.validation, "validation");
}

Dataset make_blobs(const BlobOptions& opts) {
    require(opts.num_classes >= 1 && opts.dim >= 1, ErrorKind::Domain, "blobs need classes and dimensions");
    require(opts.train_per_class >= 1 && opts.validation_per_class >= 1, ErrorKind::Domain,
            "blobs need samples in both splits");
    require(opts.clusters_per_class >= 1, ErrorKind::Domain, "blobs need at least one cluster per class");
    Rng rng(opts.seed);
    const int clusters = opts.clusters_per_class;
    std::vector<double> centres(static_cast<std::size_t>(opts.num_classes) * clusters * opts.dim);
    for (double& c : centres) c = opts.separation * rng.normal();

    Dataset d;
    d.shape = {opts.dim, 1, 1};
    d.num_classes = opts.num_classes;
    const auto fill = [&](Split& s, int per_class) {
        for (int i = 0; i < per_class; ++i) {
            for (int k = 0; k < opts.num_classes; ++k) {
                // No draw with a single cluster, so those datasets keep their exact stream.
                const int c = clusters == 1 ? 0 : static_cast<int>(rng.below(static_cast<std::uint64_t>(clusters)));
                const std::size_t base = (static_cast<std::size_t>(k) * clusters + c) * opts.dim;
                for (int j = 0; j < opts.dim; ++j) s.features.push_back(centres[base + j] + opts.noise * rng.normal());
                s.labels.push_back(k);
            }
        }
    };
    fill(d.train, opts.train_per_class);
    fill(d.validation, opts.validation_per_class);
    return d;
}

Dataset make_textures(const TextureOptions& opts) {
    require(opts.num_classes >= 1 && opts.channels >= 1 && opts.size >= 2, ErrorKind::Domain,
            "textures need classes, channels and size >= 2");
    require(opts.train_per_class >= 1 && opts.validation_per_class >= 1, ErrorKind::Domain,
            "textures need samples in both splits");
    Rng rng(opts.seed);
    Dataset d;
    d.shape = {opts.channels, opts.size, opts.size};
    d.num_classes = opts.num_classes;

    const auto fill = [&](Split& s, int per_class) {
        for (int i = 0; i < per_class; ++i) {
            for (int k = 0; k < opts.num_classes; ++k) {
                const double theta = std::numbers::pi * k / opts.num_classes;
                const double freq = 2.0 * std::numbers::pi * rng.uniform(0.18, 0.28);
                const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
                const double cx = std::cos(theta), sy = std::sin(theta);
                for (int c = 0; c < opts.channels; ++c) {
                    const double gain = rng.uniform(0.6, 1.2);
                    for (int y = 0; y < opts.size; ++y)
                        for (int x = 0; x < opts.size; ++x)
                            s.features.push_back(gain * std::sin(freq * (x * cx + y * sy) + phase) +
                                                 opts.noise * rng.normal());
                }
                s.labels.push_back(k);
            }
        }
    };
    fill(d.train, opts.train_per_class);
    fill(d.validation, opts.validation_per_class);
    return d;
}

// Binary I/O ----------------------------------------------------------------

namespace {

constexpr std::array<char, 8> kMagic = {'N', 'S', 'D', 'S', 'E', 'T', '0', '1'};

template <class U>
void put_le(std::ostream& os, U value) {
    std::array<char, sizeof(U)> bytes;
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    os.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& is) {
    std::array<unsigned char, sizeof(U)> bytes;
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!is) fail(ErrorKind::Io, "dataset file truncated");
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

void write_split(std::ostream& os, const Split& s, bool float32) {
    for (double v : s.features) {
        if (float32)
            put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        else
            put_le(os, std::bit_cast<std::uint64_t>(v));
    }
    for (int y : s.labels) put_le(os, static_cast<std::uint32_t>(y));
}

Split read_split(std::istream& is, std::uint64_t n, std::size_t sample, bool float32) {
    Split s;
    s.features.resize(n * sample);
    for (double& v : s.features)
        v = float32 ? static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(is)))
                    : std::bit_cast<double>(get_le<std::uint64_t>(is));
    s.labels.resize(n);
    for (int& y : s.labels) y = static_cast<int>(get_le<std::uint32_t>(is));
    return s;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& path, bool float32) {
    validate_dataset(data);
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::Io, "cannot write " + path.string());
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(os, float32 ? 1 : 2);
    put_le<std::uint32_t>(os, data.shape.channels);
    put_le<std::uint32_t>(os, data.shape.height);
    put_le<std::uint32_t>(os, data.shape.width);
    put_le<std::uint32_t>(os, data.num_classes);
    put_le<std::uint64_t>(os, data.train.size());
    put_le<std::uint64_t>(os, data.validation.size());
    write_split(os, data.train, float32);
    write_split(os, data.validation, float32);
    if (!os) fail(ErrorKind::Io, "failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::Io, "cannot read " + path.string());
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) fail(ErrorKind::Io, path.string() + ": not a dataset file");
    const auto dtype = get_le<std::uint32_t>(is);
    if (dtype != 1 && dtype != 2) fail(ErrorKind::Io, path.string() + ": unsupported dtype");
    Dataset d;
    d.shape.channels = static_cast<int>(get_le<std::uint32_t>(is));
    d.shape.height = static_cast<int>(get_le<std::uint32_t>(is));
    d.shape.width = static_cast<int>(get_le<std::uint32_t>(is));
    d.num_classes = static_cast<int>(get_le<std::uint32_t>(is));
    const auto n_train = get_le<std::uint64_t>(is);
    const auto n_val = get_le<std::uint64_t>(is);
    d.train = read_split(is, n_train, d.sample_size(), dtype == 1);
    d.validation = read_split(is, n_val, d.sample_size(), dtype == 1);
    validate_dataset(d);
    return d;
}

}  // namespace neuralscale
