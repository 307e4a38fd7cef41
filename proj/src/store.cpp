#include "nws/store.hpp"

#include "nws/error.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nws {

static_assert(std::endian::native == std::endian::little, "snapshot I/O assumes a little-endian host");

namespace fs = std::filesystem;

template <typename Real>
GroupIndex group_index(const std::vector<LayerState<Real>>& layers) {
    GroupIndex gi;
    std::size_t offset = 0, weight_layer = 0;
    bool seen = false, in_conv = true;
    auto add = [&](GroupKind k, std::size_t len) {
        gi.groups.push_back({weight_layer, k, offset, len});
        offset += len;
    };
    for (const auto& l : layers) {
        if (has_mult(l.kind)) {
            if (seen) ++weight_layer;
            seen = true;
            if (!is_conv(l.kind) && in_conv) {
                gi.conv_end = offset;
                in_conv = false;
            }
            add(GroupKind::mult, l.mult.size());
            add(GroupKind::bias, l.bias.size());
        } else if (l.kind == LayerKind::batchnorm) {
            if (!seen) throw ShapeError("batchnorm before any conv/fc layer cannot be vectorized");
            add(GroupKind::bn_beta, l.bn_beta.size());
            add(GroupKind::bn_gamma, l.bn_gamma.size());
            add(GroupKind::bn_mean, l.bn_mean.size());
            add(GroupKind::bn_var, l.bn_var.size());
        }
    }
    if (in_conv) gi.conv_end = offset;
    return gi;
}

namespace {

template <typename Real, typename F>
void for_each_group_tensor(std::vector<LayerState<Real>>& layers, F&& f) {
    for (auto& l : layers) {
        if (has_mult(l.kind)) {
            f(l.mult);
            f(l.bias);
        } else if (l.kind == LayerKind::batchnorm) {
            f(l.bn_beta);
            f(l.bn_gamma);
            f(l.bn_mean);
            f(l.bn_var);
        }
    }
}

}  // namespace

template <typename Real>
WeightVector vectorize(const std::vector<LayerState<Real>>& layers) {
    WeightVector wv;
    wv.index = group_index(layers);
    wv.theta.reserve(wv.index.total());
    for_each_group_tensor(const_cast<std::vector<LayerState<Real>>&>(layers), [&](const Tensor<Real>& t) {
        for (Real v : t.data) wv.theta.push_back(static_cast<float>(v));
    });
    return wv;
}

template <typename Real>
void devectorize(std::span<const float> theta, std::vector<LayerState<Real>>& layers) {
    const auto gi = group_index(layers);
    if (gi.total() != theta.size())
        throw ShapeError(fmt::format("devectorize: vector has {} values, layers need {}", theta.size(), gi.total()));
    std::size_t pos = 0;
    for_each_group_tensor(layers, [&](Tensor<Real>& t) {
        for (auto& v : t.data) v = static_cast<Real>(theta[pos++]);
    });
}

template GroupIndex group_index(const std::vector<LayerState<float>>&);
template GroupIndex group_index(const std::vector<LayerState<double>>&);
template WeightVector vectorize(const std::vector<LayerState<float>>&);
template WeightVector vectorize(const std::vector<LayerState<double>>&);
template void devectorize(std::span<const float>, std::vector<LayerState<float>>&);
template void devectorize(std::span<const float>, std::vector<LayerState<double>>&);

// ---- snapshot file ----

namespace {

class Writer {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    std::vector<char>& buffer() { return buf_; }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    Reader(const char* data, std::size_t size, std::string where) : p_(data), end_(data + size), where_(std::move(where)) {}

    template <typename T>
    T get() {
        T v;
        need(sizeof(T));
        std::memcpy(&v, p_, sizeof(T));
        p_ += sizeof(T);
        return v;
    }
    const char* take(std::size_t n) {
        need(n);
        const char* r = p_;
        p_ += n;
        return r;
    }
    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw FormatError(fmt::format("'{}': truncated snapshot", where_));
    }
    const char* p_;
    const char* end_;
    std::string where_;
};

std::uint32_t crc_of(const char* p, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(p), chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<char> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SnapshotHeader parse_header(Reader& r, const fs::path& path) {
    const char* magic = r.take(4);
    if (std::memcmp(magic, kSnapshotMagic, 4) != 0)
        throw FormatError(fmt::format("'{}': bad magic, expected \"NWS1\"", path.string()));
    const auto version = r.get<std::uint16_t>();
    if (version != kSnapshotVersion)
        throw FormatError(fmt::format("'{}': unsupported version {}, expected {}", path.string(), version, kSnapshotVersion));
    SnapshotHeader h;
    h.arch_hash = r.get<std::uint64_t>();
    const auto groups = r.get<std::uint32_t>();
    h.index.conv_end = r.get<std::uint64_t>();
    std::size_t offset = 0;
    for (std::uint32_t g = 0; g < groups; ++g) {
        GroupRecord rec;
        rec.layer = r.get<std::uint16_t>();
        const auto kind = r.get<std::uint8_t>();
        if (kind > 5) throw FormatError(fmt::format("'{}': bad group kind {}", path.string(), kind));
        rec.kind = static_cast<GroupKind>(kind);
        rec.length = r.get<std::uint64_t>();
        rec.offset = offset;
        offset += rec.length;
        h.index.groups.push_back(rec);
    }
    const auto meta_len = r.get<std::uint32_t>();
    const char* meta = r.take(meta_len);
    try {
        h.meta = Json::parse(meta, meta + meta_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("'{}': bad metadata: {}", path.string(), e.what()));
    }
    return h;
}

}  // namespace

void write_snapshot(const fs::path& path, const Snapshot& snap) {
    const auto& gi = snap.weights.index;
    if (gi.total() != snap.weights.theta.size())
        throw ShapeError(fmt::format("snapshot: index covers {} values, vector has {}", gi.total(), snap.weights.theta.size()));
    Writer w;
    w.bytes(kSnapshotMagic, 4);
    w.put<std::uint16_t>(kSnapshotVersion);
    w.put<std::uint64_t>(snap.arch_hash);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(gi.groups.size()));
    w.put<std::uint64_t>(gi.conv_end);
    for (const auto& g : gi.groups) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(g.layer));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(g.kind));
        w.put<std::uint64_t>(g.length);
    }
    const std::string meta = snap.meta.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
    w.bytes(meta.data(), meta.size());
    w.bytes(snap.weights.theta.data(), snap.weights.theta.size() * sizeof(float));
    auto& buf = w.buffer();
    w.put<std::uint32_t>(crc_of(buf.data(), buf.size()));

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += fmt::format(".tmp{}", ::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(fmt::format("cannot write '{}'", tmp.string()));
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IoError(fmt::format("write failed for '{}'", tmp.string()));
    }
    fs::rename(tmp, path);
}

Snapshot read_snapshot(const fs::path& path) {
    const auto buf = slurp(path);
    if (buf.size() < 4) throw FormatError(fmt::format("'{}': truncated snapshot", path.string()));
    Reader r(buf.data(), buf.size() - 4, path.string());
    auto h = parse_header(r, path);
    const std::size_t n = h.index.total();
    if (r.remaining() != n * sizeof(float))
        throw FormatError(fmt::format("'{}': payload is {} bytes, header declares {} floats", path.string(), r.remaining(), n));
    std::uint32_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
    const auto actual = crc_of(buf.data(), buf.size() - 4);
    if (stored != actual)
        throw FormatError(fmt::format("'{}': checksum mismatch (stored {:08x}, computed {:08x})", path.string(), stored, actual));
    Snapshot s;
    s.arch_hash = h.arch_hash;
    s.weights.index = std::move(h.index);
    s.weights.theta.resize(n);
    std::memcpy(s.weights.theta.data(), r.take(n * sizeof(float)), n * sizeof(float));
    s.meta = std::move(h.meta);
    return s;
}

SnapshotHeader read_snapshot_header(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    // fixed part, then the group table and meta sizes are known
    std::vector<char> buf(4 + 2 + 8 + 4 + 8);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!in) throw FormatError(fmt::format("'{}': truncated snapshot", path.string()));
    std::uint32_t groups;
    std::memcpy(&groups, buf.data() + 14, 4);
    const std::size_t table = static_cast<std::size_t>(groups) * 11 + 4;
    buf.resize(buf.size() + table);
    in.read(buf.data() + buf.size() - table, static_cast<std::streamsize>(table));
    if (!in) throw FormatError(fmt::format("'{}': truncated snapshot", path.string()));
    std::uint32_t meta_len;
    std::memcpy(&meta_len, buf.data() + buf.size() - 4, 4);
    buf.resize(buf.size() + meta_len);
    in.read(buf.data() + buf.size() - meta_len, meta_len);
    if (!in) throw FormatError(fmt::format("'{}': truncated snapshot", path.string()));
    Reader r(buf.data(), buf.size(), path.string());
    auto h = parse_header(r, path);
    h.payload_offset = buf.size();
    return h;
}

std::vector<float> read_snapshot_slice(const fs::path& path, std::size_t offset, std::size_t count) {
    const auto h = read_snapshot_header(path);
    if (offset + count > h.index.total())
        throw Error(fmt::format("'{}': slice [{}, {}) exceeds {} values", path.string(), offset, offset + count, h.index.total()));
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    in.seekg(static_cast<std::streamoff>(h.payload_offset + offset * sizeof(float)));
    std::vector<float> out(count);
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw FormatError(fmt::format("'{}': truncated payload", path.string()));
    return out;
}

// ---- subsets ----

std::string_view to_string(Domain d) {
    switch (d) {
        case Domain::all: return "all";
        case Domain::conv_only: return "conv-only";
        case Domain::fc_only: return "fc-only";
    }
    return "?";
}

Domain parse_domain(std::string_view s) {
    for (auto d : {Domain::all, Domain::conv_only, Domain::fc_only})
        if (to_string(d) == s) return d;
    throw ConfigError(fmt::format("unknown domain '{}' (all, conv-only, fc-only)", s));
}

DomainRange domain_range(const GroupIndex& gi, Domain d) {
    switch (d) {
        case Domain::all: return {0, gi.total()};
        case Domain::conv_only: return {0, gi.conv_end};
        case Domain::fc_only: return {gi.conv_end, gi.total()};
    }
    return {};
}

void validate(const SubsetSpec& s, const GroupIndex& gi) {
    const auto r = domain_range(gi, s.domain);
    if (s.size == 0) throw ConfigError("subset size must be positive");
    if (s.start + s.size > r.size())
        throw ConfigError(fmt::format("subset [{}, {}] exceeds {} domain of length {}", s.start, s.end(), to_string(s.domain), r.size()));
}

std::vector<float> extract_subset(std::span<const float> theta, const GroupIndex& gi, const SubsetSpec& s) {
    validate(s, gi);
    const auto begin = domain_range(gi, s.domain).begin + s.start;
    return {theta.begin() + static_cast<std::ptrdiff_t>(begin), theta.begin() + static_cast<std::ptrdiff_t>(begin + s.size)};
}

std::vector<float> read_subset(const fs::path& snapshot, const SubsetSpec& s) {
    const auto h = read_snapshot_header(snapshot);
    validate(s, h.index);
    return read_snapshot_slice(snapshot, domain_range(h.index, s.domain).begin + s.start, s.size);
}

// ---- manifest ----

namespace {

class FileLock {
public:
    explicit FileLock(const fs::path& path) {
        fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
        if (fd_ < 0) throw IoError(fmt::format("cannot open '{}'", path.string()));
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            throw IoError(fmt::format("cannot lock '{}'", path.string()));
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;
    int fd() const { return fd_; }

private:
    int fd_ = -1;
};

void write_all(int fd, const std::string& s, const fs::path& path) {
    std::size_t done = 0;
    while (done < s.size()) {
        const auto n = ::write(fd, s.data() + done, s.size() - done);
        if (n < 0) throw IoError(fmt::format("write failed for '{}'", path.string()));
        done += static_cast<std::size_t>(n);
    }
}

}  // namespace

void append_manifest(const fs::path& manifest, const RunRecord& r) {
    if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
    FileLock lock(manifest);
    write_all(lock.fd(), to_json(r).dump() + "\n", manifest);
}

std::vector<RunRecord> read_manifest(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError(fmt::format("cannot open '{}'", manifest.string()));
    std::vector<RunRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(run_record_from_json(Json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(fmt::format("{}:{}: {}", manifest.string(), lineno, e.what()));
        }
    }
    return out;
}

void write_manifest(const fs::path& manifest, std::vector<RunRecord> records) {
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::string text;
    for (const auto& r : records) text += to_json(r).dump() + "\n";
    if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
    auto tmp = manifest;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(fmt::format("cannot write '{}'", tmp.string()));
        out << text;
    }
    fs::rename(tmp, manifest);
}

void write_run_record(const fs::path& run_dir, const RunRecord& r) {
    fs::create_directories(run_dir);
    {
        std::ofstream out(run_dir / "record.json");
        if (!out) throw IoError(fmt::format("cannot write '{}'", (run_dir / "record.json").string()));
        out << to_json(r).dump(2) << "\n";
    }
    std::ofstream timing(run_dir / "timing.json");
    timing << Json{{"duration_seconds", r.duration_seconds}}.dump() << "\n";
}

RunRecord read_run_record(const fs::path& run_dir) {
    std::ifstream in(run_dir / "record.json");
    if (!in) throw IoError(fmt::format("cannot open '{}'", (run_dir / "record.json").string()));
    RunRecord r;
    try {
        r = run_record_from_json(Json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(fmt::format("'{}': {}", (run_dir / "record.json").string(), e.what()));
    }
    std::ifstream timing(run_dir / "timing.json");
    if (timing) {
        try {
            r.duration_seconds = Json::parse(timing).value("duration_seconds", 0.0);
        } catch (const nlohmann::json::exception&) {
        }
    }
    return r;
}

std::size_t rebuild_manifest(const fs::path& root, const fs::path& manifest) {
    std::vector<RunRecord> records;
    const auto runs = root / "runs";
    if (fs::exists(runs))
        for (const auto& entry : fs::directory_iterator(runs))
            if (entry.is_directory() && fs::exists(entry.path() / "record.json"))
                records.push_back(read_run_record(entry.path()));
    const auto n = records.size();
    write_manifest(manifest, std::move(records));
    return n;
}

std::vector<RunRecord> filter_converged(const std::vector<RunRecord>& records, const ConvergenceThresholds& t) {
    std::vector<RunRecord> out;
    for (const auto& r : records) {
        const auto it = t.by_dataset.find(r.hp.dataset);
        if (it == t.by_dataset.end())
            throw ConfigError(fmt::format("no convergence threshold for dataset '{}'", r.hp.dataset));
        if (r.ok() && r.final_test_accuracy() >= it->second) out.push_back(r);
    }
    return out;
}

}  // namespace nws
