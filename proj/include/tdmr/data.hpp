#pragma once

#include "tdmr/rng.hpp"
#include "tdmr/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace tdmr::data {

// A video as an ordered sequence of clip feature vectors.
struct ClipFeatureSequence {
    std::string vid;
    Mat clips;             // L x D_v
    double clip_duration = 2.0;
    double total_duration = 0.0;

    Index length() const { return clips.rows(); }
    Index dim() const { return clips.cols(); }
    void validate() const;
};

struct Window {
    double start = 0.0;
    double end = 0.0;
};

// Inclusive clip-index range.
struct IndexSpan {
    Index first = 0;
    Index last = 0;
    Index length() const { return last - first + 1; }
    bool contains(Index i) const { return i >= first && i <= last; }
};

struct QueryAnnotation {
    std::int64_t qid = 0;
    std::string vid;
    Mat query_tokens;      // W x D_t
    std::vector<Window> relevant_windows;  // seconds, sorted, non-overlapping
    std::vector<int> saliency_labels;      // length L, values 0..4
    double duration = 0.0;
    std::string query_feat_path;
    std::string video_feat_path;

    void validate() const;  // windows only; saliency length checked against a video
};

struct SynthConfig {
    int num_samples = 64;
    Index length_min = 12;
    Index length_max = 24;
    Index feature_dim = 32;
    Index text_dim = 32;
    Index words_per_query = 6;
    Index moment_length_min = 2;
    Index moment_length_max = 6;
    double signal_strength = 5.0;
    double noise_scale = 1.0;
    double clip_duration = 2.0;

    void validate() const;
};

// One query per sample; videos[i] belongs to queries[i].
struct Dataset {
    std::vector<ClipFeatureSequence> videos;
    std::vector<QueryAnnotation> queries;

    std::size_t size() const { return queries.size(); }
    const ClipFeatureSequence& video_for(std::size_t query_index) const {
        return videos[query_index];
    }
};

// ---- file formats -----------------------------------------------------

// Line-delimited JSON manifest, one query annotation per line.
std::vector<QueryAnnotation> load_manifest(const std::filesystem::path& path);

// "TDMR" feature container: magic, u16 version, u32 rows, u32 cols,
// then rows*cols float32 LE, row-major. Round trips are bit-exact after
// 32-bit quantization.
Mat load_features(const std::filesystem::path& path);
void save_features(const std::filesystem::path& path, const Mat& m);

// Manifest + sidecar feature files; relative paths resolved against the
// manifest's directory.
Dataset load_dataset(const std::filesystem::path& manifest_path, double clip_duration = 2.0);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

// ---- index arithmetic -------------------------------------------------

IndexSpan window_to_span(const Window& w, double clip_duration, Index length);
Window span_to_window(const IndexSpan& s, double clip_duration);

// Convex hull of all annotated windows as a clip span.
IndexSpan gt_span(const QueryAnnotation& q, const ClipFeatureSequence& v);

// True for clips covered by any annotated window.
std::vector<bool> gt_mask(const QueryAnnotation& q, const ClipFeatureSequence& v);

// ---- generation and evaluation-time surgery ---------------------------

// Planted-moment dataset: gaussian background, a contiguous moment whose
// clips carry signal_strength * u for a per-sample unit direction u, and
// query tokens correlated with u. Deterministic given (config, rng seed);
// sample i draws only from rng.derive(i).
Dataset generate_synthetic(const SynthConfig& cfg, const RngStream& rng);

// Replaces clips inside every relevant window with standard-gaussian
// draws; everything else, including all durations, is untouched.
ClipFeatureSequence mask_target_moment(const ClipFeatureSequence& video,
                                       const QueryAnnotation& annotation, RngStream& rng);

// Replaces every non-GT clip with clips taken in order from another
// randomly chosen video; GT clips and windows are unchanged.
Dataset build_dynamic_context_split(const Dataset& ds, RngStream& rng);

}  // namespace tdmr::data
