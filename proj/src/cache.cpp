#include "dmn/cache.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace dmn {

namespace {

constexpr char kMagic[4] = {'D', 'M', 'N', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kTypeFilters = 1;
constexpr std::uint32_t kTypeDensity = 2;
constexpr std::uint32_t kTypeSnapshots = 3;

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void put_string(std::ofstream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw io_error("cache truncated: " + path);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::ifstream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw io_error("cache truncated: " + path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

double get_f64(std::ifstream& in, const std::string& path) {
    const std::uint64_t bits = get_u64(in, path);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string get_string(std::ifstream& in, const std::string& path) {
    const std::uint32_t n = get_u32(in, path);
    if (n > 4096) throw io_error("cache string field too long: " + path);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw io_error("cache truncated: " + path);
    return s;
}

void check_magic(std::ifstream& in, const std::string& path) {
    char m[4];
    in.read(m, 4);
    if (!in || std::memcmp(m, kMagic, 4) != 0)
        throw io_error("bad cache magic in " + path);
    const std::uint32_t version = get_u32(in, path);
    if (version != kVersion)
        throw io_error("unsupported cache version " + std::to_string(version) + " in " + path);
}

class AtomicWriter {
public:
    explicit AtomicWriter(const std::string& path)
        : final_path_(path), tmp_path_(path + ".tmp"), out_(tmp_path_, std::ios::binary) {
        if (!out_) throw io_error("cannot open " + tmp_path_ + " for writing");
    }
    std::ofstream& stream() { return out_; }
    void commit() {
        out_.flush();
        if (!out_) throw io_error("write failed for " + tmp_path_);
        out_.close();
        std::filesystem::rename(tmp_path_, final_path_);
    }
    ~AtomicWriter() {
        if (out_.is_open()) {
            out_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_path_, ec);
        }
    }

private:
    std::string final_path_;
    std::string tmp_path_;
    std::ofstream out_;
};

std::string canonical_key(const CacheKey& key) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s|k=%zu|var=%.12g|cut=%.12g|frac=%.12g|seed=%llu|L=%zu|sup=%d|pin=%zu",
                  key.dataset.c_str(), key.kernel, key.variance_threshold, key.overlap_cutoff,
                  key.fraction, static_cast<unsigned long long>(key.seed), key.layer_index,
                  key.supervised ? 1 : 0, key.pinned_filters);
    return buf;
}

}  // namespace

std::uint64_t policy_hash(const CacheKey& key) {
    const std::string s = canonical_key(key);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string cache_file_name(const CacheKey& key) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%016llx.dmn1",
                  static_cast<unsigned long long>(policy_hash(key)));
    return key.dataset + "_L" + std::to_string(key.layer_index) + "_" + buf;
}

void save_dmn_layer(const DmnLayer& layer, const CacheKey& key, const std::string& path) {
    AtomicWriter writer(path);
    auto& out = writer.stream();
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, kTypeFilters);
    put_u64(out, policy_hash(key));
    put_string(out, key.dataset);
    put_u32(out, static_cast<std::uint32_t>(key.kernel));
    put_u32(out, static_cast<std::uint32_t>(layer.filters.cols));   // d
    put_u32(out, static_cast<std::uint32_t>(layer.filters.rows));   // F
    put_f64(out, key.variance_threshold);
    put_f64(out, key.overlap_cutoff);
    put_f64(out, key.fraction);
    put_u64(out, key.seed);
    put_f64(out, layer.data_fraction);
    for (const auto& p : layer.provenance) {
        put_u32(out, static_cast<std::uint32_t>(p.class_id == kTotalClass ? 0xffffffff
                                                                          : p.class_id));
        put_u32(out, static_cast<std::uint32_t>(p.mode));
        put_f64(out, p.eigenvalue);
    }
    for (double v : layer.filters.data) put_f64(out, v);
    writer.commit();
}

std::optional<DmnLayer> load_dmn_layer(const CacheKey& key, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    check_magic(in, path);
    if (get_u32(in, path) != kTypeFilters) throw io_error("not a filter cache: " + path);
    const std::uint64_t stored_hash = get_u64(in, path);
    if (stored_hash != policy_hash(key))
        throw io_error("cache key mismatch for " + path);
    const std::string dataset = get_string(in, path);
    const std::uint32_t kernel = get_u32(in, path);
    const std::uint32_t dim = get_u32(in, path);
    const std::uint32_t n_filters = get_u32(in, path);
    get_f64(in, path);  // var
    get_f64(in, path);  // cutoff
    get_f64(in, path);  // fraction
    get_u64(in, path);  // seed
    const double data_fraction = get_f64(in, path);

    DmnLayer layer;
    layer.kernel = kernel;
    layer.data_fraction = data_fraction;
    layer.provenance.resize(n_filters);
    for (auto& p : layer.provenance) {
        const std::uint32_t cls = get_u32(in, path);
        p.class_id = (cls == 0xffffffff) ? kTotalClass : static_cast<int>(cls);
        p.mode = get_u32(in, path);
        p.eigenvalue = get_f64(in, path);
    }
    layer.filters = Matrix(n_filters, dim);
    for (auto& v : layer.filters.data) v = get_f64(in, path);
    if (dataset != key.dataset) throw io_error("cache dataset mismatch for " + path);
    return layer;
}

void save_density(const DensityAccumulator& acc, const std::string& dataset,
                  std::size_t kernel, const std::string& path) {
    AtomicWriter writer(path);
    auto& out = writer.stream();
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, kTypeDensity);
    put_string(out, dataset);
    put_u32(out, static_cast<std::uint32_t>(kernel));
    put_u32(out, static_cast<std::uint32_t>(acc.dim()));
    put_u32(out, static_cast<std::uint32_t>(acc.num_classes()));
    for (int c = 0; c < acc.num_classes(); ++c)
        put_u64(out, acc.class_count(c));
    for (int c = 0; c < acc.num_classes(); ++c) {
        const Matrix s = acc.sum_matrix(c);
        for (double v : s.data) put_f64(out, v);
    }
    writer.commit();
}

std::optional<DensityAccumulator> load_density(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    check_magic(in, path);
    if (get_u32(in, path) != kTypeDensity) throw io_error("not a density cache: " + path);
    get_string(in, path);  // dataset
    get_u32(in, path);     // kernel
    const std::uint32_t dim = get_u32(in, path);
    const std::uint32_t n_classes = get_u32(in, path);

    DensityAccumulator acc(dim, static_cast<int>(n_classes));
    std::vector<std::uint64_t> counts(n_classes);
    for (auto& c : counts) c = get_u64(in, path);
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        Matrix s(dim, dim);
        for (auto& v : s.data) v = get_f64(in, path);
        std::vector<double> packed(dim * (dim + 1) / 2);
        std::size_t idx = 0;
        for (std::uint32_t i = 0; i < dim; ++i)
            for (std::uint32_t j = i; j < dim; ++j) packed[idx++] = s.at(i, j);
        acc.inject(static_cast<int>(c), packed, counts[c]);
    }
    return acc;
}

void save_snapshots(const std::vector<std::vector<std::vector<double>>>& snapshots,
                    const std::string& path) {
    AtomicWriter writer(path);
    auto& out = writer.stream();
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, kTypeSnapshots);
    put_u32(out, static_cast<std::uint32_t>(snapshots.size()));
    put_u32(out, snapshots.empty() ? 0u
                                   : static_cast<std::uint32_t>(snapshots.front().size()));
    for (const auto& epoch : snapshots)
        for (const auto& layer : epoch) {
            put_u64(out, layer.size());
            for (double v : layer) put_f64(out, v);
        }
    writer.commit();
}

std::optional<std::vector<std::vector<std::vector<double>>>> load_snapshots(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    check_magic(in, path);
    if (get_u32(in, path) != kTypeSnapshots) throw io_error("not a snapshot file: " + path);
    const std::uint32_t n_epochs = get_u32(in, path);
    const std::uint32_t n_layers = get_u32(in, path);
    std::vector<std::vector<std::vector<double>>> snapshots(n_epochs);
    for (auto& epoch : snapshots) {
        epoch.resize(n_layers);
        for (auto& layer : epoch) {
            layer.resize(get_u64(in, path));
            for (auto& v : layer) v = get_f64(in, path);
        }
    }
    return snapshots;
}

CacheSummary inspect_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    check_magic(in, path);
    const std::uint32_t type = get_u32(in, path);
    CacheSummary s;
    if (type == kTypeFilters) {
        s.type = "filters";
        s.hash = get_u64(in, path);
        s.dataset = get_string(in, path);
        s.kernel = get_u32(in, path);
        s.dim = get_u32(in, path);
        s.filters = get_u32(in, path);
        s.variance_threshold = get_f64(in, path);
        s.overlap_cutoff = get_f64(in, path);
        s.fraction = get_f64(in, path);
        s.seed = get_u64(in, path);
    } else if (type == kTypeDensity) {
        s.type = "density";
        s.dataset = get_string(in, path);
        s.kernel = get_u32(in, path);
        s.dim = get_u32(in, path);
        s.num_classes = static_cast<int>(get_u32(in, path));
    } else if (type == kTypeSnapshots) {
        s.type = "snapshots";
        s.epochs = get_u32(in, path);
        s.layers = get_u32(in, path);
    } else {
        throw io_error("unknown cache record type in " + path);
    }
    return s;
}

}  // namespace dmn
