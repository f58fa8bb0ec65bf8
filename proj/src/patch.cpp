// SPDX-License-Identifier: Apache-2.0
#include "patchlab/patch.hpp"

#include "patchlab/binio.hpp"
#include "patchlab/rng.hpp"

namespace patchlab {

namespace {

void validate_patch(const Tensor& pixels) {
    require(pixels.rank() == 3, ErrKind::validation,
            cat("patch must be [C,H,W], got ", pixels.shape_str()));
    const int c = pixels.shape[0];
    require(c == 1 || c == 3, ErrKind::validation, cat("patch channels must be 1 or 3, got ", c));
    require(pixels.shape[1] >= 4 && pixels.shape[2] >= 4, ErrKind::validation,
            cat("patch spatial dims must be >= 4, got ", pixels.shape_str()));
    for (double v : pixels.data)
        require(v >= 0.0 && v <= 1.0 && std::isfinite(v), ErrKind::validation,
                cat("patch values must lie in [0,1], found ", v));
}

void write_epch_record(binio::Writer& w, const Patch& p) {
    w.magic("EPCH");
    w.u16(1);
    w.u32(static_cast<uint32_t>(p.channels()));
    w.u32(static_cast<uint32_t>(p.height()));
    w.u32(static_cast<uint32_t>(p.width()));
    w.f64_block(p.pixels.data.data(), p.pixels.data.size());
    std::string meta;
    for (const auto& [k, v] : p.meta) {
        require(k.find('=') == std::string::npos && k.find('\n') == std::string::npos &&
                    v.find('\n') == std::string::npos,
                ErrKind::validation, cat("patch metadata key/value not encodable: ", k));
        meta += k;
        meta += '=';
        meta += v;
        meta += '\n';
    }
    w.str32(meta);
}

Patch read_epch_record(binio::Reader& r) {
    r.magic("EPCH");
    const uint16_t ver = r.u16();
    if (ver != 1)
        fail(ErrKind::parse, r.path().string(), ": unsupported EPCH version ", ver,
             " at byte offset ", r.offset() - 2);
    const uint32_t c = r.u32();
    const uint32_t h = r.u32();
    const uint32_t wd = r.u32();
    if (c == 0 || h == 0 || wd == 0 || c > 4 || h > 1u << 14 || wd > 1u << 14)
        fail(ErrKind::parse, r.path().string(), ": implausible patch shape ", c, "x", h, "x", wd,
             " at byte offset ", r.offset() - 12);
    Tensor pixels({static_cast<int>(c), static_cast<int>(h), static_cast<int>(wd)});
    r.f64_block(pixels.data.data(), pixels.data.size());
    const std::string meta = r.str32();
    std::map<std::string, std::string> kv;
    size_t pos = 0;
    while (pos < meta.size()) {
        const size_t nl = meta.find('\n', pos);
        const std::string line = meta.substr(pos, nl == std::string::npos ? nl : nl - pos);
        pos = nl == std::string::npos ? meta.size() : nl + 1;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrKind::parse, r.path().string(), ": metadata line without '=': ", line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return make_patch(std::move(pixels), std::move(kv));
}

} // namespace

Patch make_patch(Tensor pixels, std::map<std::string, std::string> meta) {
    validate_patch(pixels);
    return Patch{std::move(pixels), std::move(meta)};
}

Patch init_random(int c, int h, int w, uint64_t seed) {
    require(h >= 4 && w >= 4 && (c == 1 || c == 3), ErrKind::validation,
            cat("invalid patch dims ", c, "x", h, "x", w));
    Rng rng(seed);
    Tensor pixels({c, h, w});
    for (double& v : pixels.data) v = rng.uniform();
    return make_patch(std::move(pixels));
}

Patch gray_patch(int c, int h, int w, double value) {
    require(value >= 0.0 && value <= 1.0, ErrKind::validation,
            cat("gray value must lie in [0,1], got ", value));
    return make_patch(Tensor({c, h, w}, value));
}

Patch clamp01(const Patch& p) {
    Tensor out = p.pixels;
    for (double& v : out.data) v = std::min(1.0, std::max(0.0, v));
    return Patch{std::move(out), p.meta};
}

std::vector<Patch> gray_control_set(int c, int h, int w) {
    std::vector<Patch> out;
    out.reserve(11);
    for (int k = 0; k <= 10; ++k) {
        Patch p = gray_patch(c, h, w, k / 10.0);
        p.meta["gray_value"] = cat(k / 10.0);
        out.push_back(std::move(p));
    }
    return out;
}

PatchSet::PatchSet(std::vector<Patch> patches) {
    require(!patches.empty(), ErrKind::validation, "patch set needs at least one patch");
    for (auto& p : patches) append(std::move(p));
}

void PatchSet::append(Patch p) {
    if (!patches_.empty() && p.pixels.shape != patches_.front().pixels.shape)
        fail(ErrKind::validation, "patch set shape mismatch: have ",
             patches_.front().pixels.shape_str(), ", appending ", p.pixels.shape_str());
    patches_.push_back(std::move(p));
}

void save_patch(const std::filesystem::path& path, const Patch& p) {
    binio::Writer w(path);
    write_epch_record(w, p);
    w.close();
}

Patch load_patch(const std::filesystem::path& path) {
    binio::Reader r(path);
    return read_epch_record(r);
}

void save_patch_set(const std::filesystem::path& path, const PatchSet& set) {
    require(set.count() >= 1, ErrKind::validation, "cannot save empty patch set");
    binio::Writer w(path);
    w.magic("EPSET");
    w.u32(static_cast<uint32_t>(set.count()));
    for (const auto& p : set.patches()) write_epch_record(w, p);
    w.close();
}

PatchSet load_patch_set(const std::filesystem::path& path) {
    binio::Reader r(path);
    r.magic("EPSET");
    const uint32_t n = r.u32();
    if (n == 0 || n > 1u << 20)
        fail(ErrKind::parse, path.string(), ": implausible patch count ", n, " at byte offset 5");
    PatchSet set;
    for (uint32_t i = 0; i < n; ++i) set.append(read_epch_record(r));
    return set;
}

} // namespace patchlab
