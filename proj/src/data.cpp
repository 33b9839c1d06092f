#include "tdmr/data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "feature file I/O assumes a little-endian host");

namespace tdmr::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'D', 'M', 'R'};
constexpr std::uint16_t kFormatVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void ClipFeatureSequence::validate() const {
    const Index L = length();
    if (L < 1) throw ValidationError("video '" + vid + "': no clips");
    if (clip_duration <= 0.0) throw ValidationError("video '" + vid + "': clip_duration <= 0");
    const double lo = (static_cast<double>(L) - 1.0) * clip_duration;
    const double hi = static_cast<double>(L) * clip_duration;
    if (!(total_duration > lo && total_duration <= hi)) {
        throw ValidationError("video '" + vid + "': total_duration " +
                              std::to_string(total_duration) + " inconsistent with L=" +
                              std::to_string(L));
    }
}

void QueryAnnotation::validate() const {
    double prev_end = -1.0;
    for (const Window& w : relevant_windows) {
        if (!(0.0 <= w.start && w.start < w.end && w.end <= duration)) {
            throw ValidationError("qid " + std::to_string(qid) + ": bad window [" +
                                  std::to_string(w.start) + "," + std::to_string(w.end) + "]");
        }
        if (w.start < prev_end) {
            throw ValidationError("qid " + std::to_string(qid) +
                                  ": windows overlap or are unsorted");
        }
        prev_end = w.end;
    }
    for (int s : saliency_labels) {
        if (s < 0 || s > 4) {
            throw ValidationError("qid " + std::to_string(qid) + ": saliency label out of [0,4]");
        }
    }
}

void SynthConfig::validate() const {
    if (num_samples < 1) throw ValidationError("synth: num_samples must be >= 1");
    if (!(2 <= length_min && length_min <= length_max)) {
        throw ValidationError("synth: need 2 <= length_min <= length_max");
    }
    if (!(1 <= moment_length_min && moment_length_min <= moment_length_max &&
          moment_length_max <= length_min)) {
        throw ValidationError("synth: moment lengths must fit inside length_min");
    }
    if (feature_dim < 1 || text_dim < 1 || words_per_query < 1) {
        throw ValidationError("synth: dims must be positive");
    }
    if (noise_scale < 0.0 || signal_strength < 0.0 || clip_duration <= 0.0) {
        throw ValidationError("synth: scales must be nonnegative, clip_duration positive");
    }
}

std::vector<QueryAnnotation> load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());
    std::vector<QueryAnnotation> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": malformed JSON (" + e.what() + ")");
        }
        QueryAnnotation q;
        try {
            q.qid = j.at("qid").get<std::int64_t>();
            q.vid = j.at("vid").get<std::string>();
            q.duration = j.at("duration").get<double>();
            for (const auto& w : j.at("relevant_windows")) {
                q.relevant_windows.push_back({w.at(0).get<double>(), w.at(1).get<double>()});
            }
            q.saliency_labels = j.at("saliency").get<std::vector<int>>();
            q.query_feat_path = j.at("query_feat").get<std::string>();
            q.video_feat_path = j.at("video_feat").get<std::string>();
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": missing or mistyped field (" + e.what() + ")");
        }
        q.validate();
        out.push_back(std::move(q));
    }
    return out;
}

Mat load_features(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError(path.string() + ": bad magic");
    }
    const auto version = read_le<std::uint16_t>(in);
    if (version != kFormatVersion) {
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    }
    const auto rows = read_le<std::uint32_t>(in);
    const auto cols = read_le<std::uint32_t>(in);
    Mat m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
        float f;
        in.read(reinterpret_cast<char*>(&f), sizeof(float));
        if (!in) throw FormatError(path.string() + ": truncated payload");
        m.data()[i] = static_cast<double>(f);
    }
    return m;
}

void save_features(const fs::path& path, const Mat& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write feature file: " + path.string());
    out.write(kMagic, 4);
    write_le<std::uint16_t>(out, kFormatVersion);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) {
        const float f = static_cast<float>(m.data()[i]);
        out.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
    if (!out) throw IoError("short write: " + path.string());
}

Dataset load_dataset(const fs::path& manifest_path, double clip_duration) {
    Dataset ds;
    ds.queries = load_manifest(manifest_path);
    const fs::path root = manifest_path.parent_path();
    std::unordered_map<std::string, Mat> video_cache;
    for (QueryAnnotation& q : ds.queries) {
        q.query_tokens = load_features(root / q.query_feat_path);
        auto it = video_cache.find(q.video_feat_path);
        if (it == video_cache.end()) {
            it = video_cache.emplace(q.video_feat_path, load_features(root / q.video_feat_path)).first;
        }
        ClipFeatureSequence v;
        v.vid = q.vid;
        v.clips = it->second;
        v.clip_duration = clip_duration;
        v.total_duration = q.duration;
        v.validate();
        if (q.saliency_labels.size() != static_cast<std::size_t>(v.length())) {
            throw ValidationError("qid " + std::to_string(q.qid) +
                                  ": saliency length != video length");
        }
        ds.videos.push_back(std::move(v));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir / "features");
    std::ofstream manifest(dir / "manifest.jsonl", std::ios::trunc);
    if (!manifest) throw IoError("cannot write manifest in " + dir.string());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const QueryAnnotation& q = ds.queries[i];
        const ClipFeatureSequence& v = ds.videos[i];
        const std::string qf = "features/q" + std::to_string(q.qid) + ".tdmr";
        const std::string vf = "features/" + v.vid + ".tdmr";
        save_features(dir / qf, q.query_tokens);
        save_features(dir / vf, v.clips);
        json j;
        j["qid"] = q.qid;
        j["vid"] = q.vid;
        j["duration"] = q.duration;
        json windows = json::array();
        for (const Window& w : q.relevant_windows) windows.push_back({w.start, w.end});
        j["relevant_windows"] = windows;
        j["saliency"] = q.saliency_labels;
        j["query_feat"] = qf;
        j["video_feat"] = vf;
        manifest << j.dump() << '\n';
    }
}

IndexSpan window_to_span(const Window& w, double clip_duration, Index length) {
    Index first = static_cast<Index>(std::floor(w.start / clip_duration));
    Index last = static_cast<Index>(std::ceil(w.end / clip_duration)) - 1;
    first = std::clamp<Index>(first, 0, length - 1);
    last = std::clamp<Index>(last, 0, length - 1);
    if (first > last) {
        throw ValidationError("window_to_span: degenerate span after clamping");
    }
    return {first, last};
}

Window span_to_window(const IndexSpan& s, double clip_duration) {
    return {static_cast<double>(s.first) * clip_duration,
            static_cast<double>(s.last + 1) * clip_duration};
}

IndexSpan gt_span(const QueryAnnotation& q, const ClipFeatureSequence& v) {
    if (q.relevant_windows.empty()) {
        throw ValidationError("qid " + std::to_string(q.qid) + ": no relevant windows");
    }
    IndexSpan hull{v.length(), -1};
    for (const Window& w : q.relevant_windows) {
        const IndexSpan s = window_to_span(w, v.clip_duration, v.length());
        hull.first = std::min(hull.first, s.first);
        hull.last = std::max(hull.last, s.last);
    }
    return hull;
}

std::vector<bool> gt_mask(const QueryAnnotation& q, const ClipFeatureSequence& v) {
    std::vector<bool> mask(v.length(), false);
    for (const Window& w : q.relevant_windows) {
        const IndexSpan s = window_to_span(w, v.clip_duration, v.length());
        for (Index i = s.first; i <= s.last; ++i) mask[i] = true;
    }
    return mask;
}

Dataset generate_synthetic(const SynthConfig& cfg, const RngStream& rng) {
    cfg.validate();
    Dataset ds;
    // One shared text projection so query tokens live in D_t even when
    // D_t != D_v; identity when dims match.
    Mat text_proj;
    if (cfg.text_dim == cfg.feature_dim) {
        text_proj = Mat::Identity(cfg.feature_dim, cfg.text_dim);
    } else {
        RngStream proj_rng = rng.derive(0x74657874ULL);
        text_proj = Mat(cfg.feature_dim, cfg.text_dim);
        for (Index i = 0; i < text_proj.size(); ++i) {
            text_proj.data()[i] = proj_rng.normal() / std::sqrt(static_cast<double>(cfg.feature_dim));
        }
    }
    for (int s = 0; s < cfg.num_samples; ++s) {
        RngStream r = rng.derive(static_cast<std::uint64_t>(s));
        const Index L = r.uniform_int(cfg.length_min, cfg.length_max);
        const Index mlen = r.uniform_int(cfg.moment_length_min, cfg.moment_length_max);
        const Index mstart = r.uniform_int(0, L - mlen);

        Mat u(1, cfg.feature_dim);
        for (Index j = 0; j < cfg.feature_dim; ++j) u(0, j) = r.normal();
        u /= u.norm();

        ClipFeatureSequence v;
        v.vid = "synth" + std::to_string(s);
        v.clip_duration = cfg.clip_duration;
        v.total_duration = static_cast<double>(L) * cfg.clip_duration;
        v.clips = Mat(L, cfg.feature_dim);
        for (Index i = 0; i < L; ++i) {
            for (Index j = 0; j < cfg.feature_dim; ++j) {
                v.clips(i, j) = cfg.noise_scale * r.normal();
            }
        }
        for (Index i = mstart; i < mstart + mlen; ++i) {
            v.clips.row(i) += cfg.signal_strength * u.row(0);
        }

        QueryAnnotation q;
        q.qid = s;
        q.vid = v.vid;
        q.duration = v.total_duration;
        q.query_tokens = Mat(cfg.words_per_query, cfg.text_dim);
        const Mat u_text = u * text_proj;  // 1 x D_t
        for (Index w = 0; w < cfg.words_per_query; ++w) {
            for (Index j = 0; j < cfg.text_dim; ++j) {
                q.query_tokens(w, j) = u_text(0, j) + 0.1 * r.normal();
            }
        }
        const IndexSpan span{mstart, mstart + mlen - 1};
        Window win = span_to_window(span, cfg.clip_duration);
        win.end = std::min(win.end, q.duration);
        q.relevant_windows = {win};
        q.saliency_labels.assign(L, 0);
        for (Index i = span.first; i <= span.last; ++i) q.saliency_labels[i] = 3;
        q.validate();
        v.validate();
        ds.videos.push_back(std::move(v));
        ds.queries.push_back(std::move(q));
    }
    return ds;
}

ClipFeatureSequence mask_target_moment(const ClipFeatureSequence& video,
                                       const QueryAnnotation& annotation, RngStream& rng) {
    if (annotation.vid != video.vid) {
        throw ValidationError("mask_target_moment: annotation/video vid mismatch");
    }
    ClipFeatureSequence out = video;
    const std::vector<bool> mask = gt_mask(annotation, video);
    for (Index i = 0; i < out.length(); ++i) {
        if (!mask[i]) continue;
        for (Index j = 0; j < out.dim(); ++j) out.clips(i, j) = rng.normal();
    }
    return out;
}

Dataset build_dynamic_context_split(const Dataset& ds, RngStream& rng) {
    if (ds.size() < 2) {
        throw ValidationError("build_dynamic_context_split: need at least 2 videos");
    }
    Dataset out = ds;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::size_t donor = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(ds.size()) - 2));
        if (donor >= i) ++donor;
        const Mat& donor_clips = ds.videos[donor].clips;
        if (ds.videos[donor].dim() != ds.videos[i].dim()) {
            throw ValidationError("build_dynamic_context_split: feature dim mismatch");
        }
        const std::vector<bool> mask = gt_mask(ds.queries[i], ds.videos[i]);
        Index next = 0;
        for (Index c = 0; c < out.videos[i].length(); ++c) {
            if (mask[c]) continue;
            out.videos[i].clips.row(c) = donor_clips.row(next % donor_clips.rows());
            ++next;
        }
    }
    return out;
}

}  // namespace tdmr::data
