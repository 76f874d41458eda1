#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gazeseq/error.hpp"
#include "gazeseq/geometry.hpp"
#include "gazeseq/image_io.hpp"
#include "gazeseq/oculomotor.hpp"
#include "gazeseq/render.hpp"
#include "gazeseq/rng.hpp"

namespace gazeseq {

inline constexpr int kSequencesPerRecording = 10;
inline constexpr int kFramesPerSequence = 100;
inline constexpr int kManifestVersion = 1;

struct FrameRecord {
    EyeFrame frame;
    GazeAngles gt;
    FrameLabel label = FrameLabel::kFix;
    double t_ms = 0.0;
};

struct Sequence {
    int index = 0;
    std::vector<FrameRecord> frames;
};

/// One eye of one subject: 10 sequences of 100 contiguous 100 Hz frames.
/// Frames and ground truth are stored as captured (right eyes un-mirrored).
struct Recording {
    int subject_id = 0;
    Side side = Side::kLeft;
    std::vector<Sequence> sequences;
};

inline void validate(const Recording& r) {
    if (r.sequences.size() != static_cast<std::size_t>(kSequencesPerRecording)) {
        throw GenerationError("recording must hold exactly 10 sequences");
    }
    for (const auto& seq : r.sequences) {
        if (seq.frames.size() != static_cast<std::size_t>(kFramesPerSequence)) {
            throw GenerationError("sequence must hold exactly 100 frames");
        }
        for (std::size_t i = 1; i < seq.frames.size(); ++i) {
            if (std::abs(seq.frames[i].t_ms - seq.frames[i - 1].t_ms - kFramePeriodMs) > 1e-9) {
                throw GenerationError("sequence frames are not contiguous in time");
            }
        }
    }
}

enum class Split { kTrain, kVal, kTest };

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::kTrain: return "TRAIN";
        case Split::kVal: return "VAL";
        case Split::kTest: return "TEST";
    }
    return "?";
}

inline Split parse_split(std::string_view s) {
    if (s == "TRAIN") return Split::kTrain;
    if (s == "VAL") return Split::kVal;
    if (s == "TEST") return Split::kTest;
    throw DataError("unknown split '" + std::string(s) + "'");
}

struct SplitAssignment {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

/// Subject-independent 5:1:2.4 split. Counts are round(n*5/8.4) and
/// round(n*1/8.4), the remainder goes to test. Input order does not matter.
inline SplitAssignment split_subjects(std::vector<int> subject_ids, std::uint64_t seed) {
    std::sort(subject_ids.begin(), subject_ids.end());
    if (std::adjacent_find(subject_ids.begin(), subject_ids.end()) != subject_ids.end()) {
        throw InvalidInput("split_subjects: duplicate subject ids");
    }
    if (subject_ids.size() < 8) throw InvalidInput("split_subjects: need at least 8 subjects");
    Rng rng(derive_seed(seed, {tag(SeedStream::kSplit)}));
    std::shuffle(subject_ids.begin(), subject_ids.end(), rng);

    const double n = static_cast<double>(subject_ids.size());
    const auto n_train = static_cast<std::size_t>(std::lround(n * 5.0 / 8.4));
    const auto n_val = static_cast<std::size_t>(std::lround(n * 1.0 / 8.4));
    SplitAssignment out;
    out.train.assign(subject_ids.begin(), subject_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(subject_ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                   subject_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.assign(subject_ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), subject_ids.end());
    for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
    return out;
}

struct GenerationParams {
    AngleRange yaw_range{-20.0, 20.0};
    AngleRange pitch_range{-20.0, 20.0};
    int n_fixations = 12;
    double noise_sigma = 12.0;
    OculomotorParams oculomotor;
};

struct DatasetManifest {
    int version = kManifestVersion;
    std::string root;
    int n_subjects = 0;
    std::uint64_t seed = 0;
    std::size_t n_frames = 0;
    GenerationParams params;
    std::vector<SubjectAppearance> subjects;
    std::map<int, Split> split;

    std::vector<int> subjects_in(Split s) const {
        std::vector<int> ids;
        for (const auto& [id, sp] : split) {
            if (sp == s) ids.push_back(id);
        }
        return ids;
    }
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const OculomotorParams& p) {
    return {{"latency_min_ms", p.latency_min_ms},
            {"latency_max_ms", p.latency_max_ms},
            {"main_sequence_c0_ms", p.main_sequence_c0_ms},
            {"main_sequence_c1_ms_per_deg", p.main_sequence_c1_ms_per_deg},
            {"fixation_jitter_sigma_deg", p.fixation_jitter_sigma_deg},
            {"landing_noise_sigma_deg", p.landing_noise_sigma_deg}};
}

inline nlohmann::json to_json(const SubjectAppearance& a) {
    return {{"subject_id", a.subject_id},
            {"iris_radius_px", a.iris_radius_px},
            {"pupil_to_iris_ratio", a.pupil_to_iris_ratio},
            {"sclera_intensity", a.sclera_intensity},
            {"iris_intensity", a.iris_intensity},
            {"skin_intensity", a.skin_intensity},
            {"eyelid_aperture_px", a.eyelid_aperture_px},
            {"eye_center_offset_px", a.eye_center_offset_px},
            {"gain_per_degree_px", a.gain_per_degree_px},
            {"glints_enabled", a.glints_enabled},
            {"seed", a.seed}};
}

inline SubjectAppearance appearance_from_json(const nlohmann::json& j) {
    SubjectAppearance a;
    a.subject_id = j.at("subject_id").get<int>();
    a.iris_radius_px = j.at("iris_radius_px").get<double>();
    a.pupil_to_iris_ratio = j.at("pupil_to_iris_ratio").get<double>();
    a.sclera_intensity = j.at("sclera_intensity").get<double>();
    a.iris_intensity = j.at("iris_intensity").get<double>();
    a.skin_intensity = j.at("skin_intensity").get<double>();
    a.eyelid_aperture_px = j.at("eyelid_aperture_px").get<double>();
    a.eye_center_offset_px = j.at("eye_center_offset_px").get<std::array<double, 2>>();
    a.gain_per_degree_px = j.at("gain_per_degree_px").get<std::array<double, 2>>();
    a.glints_enabled = j.at("glints_enabled").get<bool>();
    a.seed = j.at("seed").get<std::uint64_t>();
    return a;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
    nlohmann::json split = nlohmann::json::object();
    for (const auto& [id, s] : m.split) split[std::to_string(id)] = std::string(to_string(s));
    nlohmann::json subjects = nlohmann::json::array();
    for (const auto& a : m.subjects) subjects.push_back(to_json(a));
    return {{"version", m.version},
            {"root", m.root},
            {"n_subjects", m.n_subjects},
            {"seed", m.seed},
            {"n_frames", m.n_frames},
            {"sequences_per_recording", kSequencesPerRecording},
            {"frames_per_sequence", kFramesPerSequence},
            {"frame_rows", kFrameRows},
            {"frame_cols", kFrameCols},
            {"generation",
             {{"yaw_range", {m.params.yaw_range.lo, m.params.yaw_range.hi}},
              {"pitch_range", {m.params.pitch_range.lo, m.params.pitch_range.hi}},
              {"n_fixations", m.params.n_fixations},
              {"noise_sigma", m.params.noise_sigma},
              {"oculomotor", to_json(m.params.oculomotor)}}},
            {"subjects", subjects},
            {"split", split}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    try {
        DatasetManifest m;
        m.version = j.at("version").get<int>();
        if (m.version != kManifestVersion) throw DataError("unsupported manifest version");
        m.root = j.at("root").get<std::string>();
        m.n_subjects = j.at("n_subjects").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.n_frames = j.at("n_frames").get<std::size_t>();
        const auto& g = j.at("generation");
        const auto yaw = g.at("yaw_range").get<std::array<double, 2>>();
        const auto pitch = g.at("pitch_range").get<std::array<double, 2>>();
        m.params.yaw_range = {yaw[0], yaw[1]};
        m.params.pitch_range = {pitch[0], pitch[1]};
        m.params.n_fixations = g.at("n_fixations").get<int>();
        m.params.noise_sigma = g.at("noise_sigma").get<double>();
        const auto& o = g.at("oculomotor");
        m.params.oculomotor.latency_min_ms = o.at("latency_min_ms").get<double>();
        m.params.oculomotor.latency_max_ms = o.at("latency_max_ms").get<double>();
        m.params.oculomotor.main_sequence_c0_ms = o.at("main_sequence_c0_ms").get<double>();
        m.params.oculomotor.main_sequence_c1_ms_per_deg = o.at("main_sequence_c1_ms_per_deg").get<double>();
        m.params.oculomotor.fixation_jitter_sigma_deg = o.at("fixation_jitter_sigma_deg").get<double>();
        m.params.oculomotor.landing_noise_sigma_deg = o.at("landing_noise_sigma_deg").get<double>();
        for (const auto& s : j.at("subjects")) m.subjects.push_back(appearance_from_json(s));
        for (const auto& [key, value] : j.at("split").items()) {
            m.split[std::stoi(key)] = parse_split(value.get<std::string>());
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

namespace layout {

inline std::string zero_pad(int v, int width) {
    std::string s = std::to_string(v);
    return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

inline std::filesystem::path sequence_dir(const std::filesystem::path& root, int subject, Side side, int seq) {
    return root / ("sub" + zero_pad(subject, 3)) / std::string(to_string(side)) / ("seq" + zero_pad(seq, 2));
}

inline std::filesystem::path frame_file(const std::filesystem::path& seq_dir, int frame) {
    return seq_dir / ("frame" + zero_pad(frame, 3) + ".pgm");
}

inline std::filesystem::path manifest_file(const std::filesystem::path& root) { return root / "manifest.json"; }

}  // namespace layout

inline constexpr std::string_view kGtHeader = "frame,t_ms,yaw_deg,pitch_deg,label";

inline std::string encode_gt_csv(const Sequence& seq) {
    std::string out(kGtHeader);
    out += '\n';
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        const auto& f = seq.frames[i];
        out += std::to_string(i) + ',' + format_fixed6(f.t_ms) + ',' + format_fixed6(f.gt.yaw_deg) + ',' +
               format_fixed6(f.gt.pitch_deg) + ',' + std::string(to_string(f.label)) + '\n';
    }
    return out;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty()) lines.push_back(line);
        start = nl + 1;
    }
    return lines;
}

inline void write_recording(const std::filesystem::path& root, const Recording& rec) {
    std::error_code ec;
    for (const auto& seq : rec.sequences) {
        const auto dir = layout::sequence_dir(root, rec.subject_id, rec.side, seq.index);
        std::filesystem::create_directories(dir, ec);
        if (ec) throw PersistenceError("cannot create '" + dir.string() + "': " + ec.message());
        for (std::size_t i = 0; i < seq.frames.size(); ++i) {
            write_pgm(layout::frame_file(dir, static_cast<int>(i)), seq.frames[i].frame);
        }
        write_file(dir / "gt.csv", encode_gt_csv(seq));
    }
}

inline Recording read_recording(const std::filesystem::path& root, int subject, Side side) {
    Recording rec;
    rec.subject_id = subject;
    rec.side = side;
    for (int s = 0; s < kSequencesPerRecording; ++s) {
        const auto dir = layout::sequence_dir(root, subject, side, s);
        const std::string csv = read_file(dir / "gt.csv");
        const auto lines = split_lines(csv);
        if (lines.empty() || lines.front() != kGtHeader) throw DataError("bad gt.csv header in " + dir.string());
        Sequence seq;
        seq.index = s;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const auto fields = split_csv_line(lines[i]);
            if (fields.size() != 5) throw DataError("bad gt.csv row in " + dir.string());
            FrameRecord fr;
            const int frame_idx = static_cast<int>(parse_double(fields[0]));
            fr.t_ms = parse_double(fields[1]);
            fr.gt = {parse_double(fields[2]), parse_double(fields[3])};
            fr.label = parse_frame_label(fields[4]);
            fr.frame = read_pgm(layout::frame_file(dir, frame_idx), side);
            seq.frames.push_back(std::move(fr));
        }
        rec.sequences.push_back(std::move(seq));
    }
    try {
        validate(rec);
    } catch (const GenerationError& e) {
        throw DataError(e.what());
    }
    return rec;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Start frames of 10 non-overlapping 100-frame sequences inside a scanpath.
inline std::vector<int> pick_sequence_starts(int n_frames, std::uint64_t seed) {
    const int spare = n_frames - kSequencesPerRecording * kFramesPerSequence;
    if (spare < 0) throw GenerationError("scanpath too short for 10 sequences of 100 frames");
    Rng rng(seed);
    std::uniform_int_distribution<int> offset(0, spare);
    std::vector<int> offsets(kSequencesPerRecording);
    for (auto& o : offsets) o = offset(rng);
    std::sort(offsets.begin(), offsets.end());
    std::vector<int> starts(kSequencesPerRecording);
    for (int k = 0; k < kSequencesPerRecording; ++k) starts[k] = k * kFramesPerSequence + offsets[k];
    return starts;
}

/// Both eyes of a subject follow one conjugate scanpath; each eye gets its own
/// sensor noise.
inline std::array<Recording, 2> generate_subject(int subject_id, std::uint64_t seed, const GenerationParams& params,
                                                 const SubjectAppearance& app) {
    const auto sid = static_cast<std::uint64_t>(subject_id);
    const auto script = generate_stimulus(derive_seed(seed, {tag(SeedStream::kStimulus), sid}),
                                          params.n_fixations, params.yaw_range, params.pitch_range);
    const auto path = simulate_scanpath(script, params.oculomotor, derive_seed(seed, {tag(SeedStream::kScanpath), sid}));
    const auto starts = pick_sequence_starts(static_cast<int>(path.size()),
                                             derive_seed(seed, {tag(SeedStream::kSequencePick), sid}));

    std::array<Recording, 2> out;
    for (Side side : {Side::kLeft, Side::kRight}) {
        Recording& rec = out[side == Side::kLeft ? 0 : 1];
        rec.subject_id = subject_id;
        rec.side = side;
        for (int s = 0; s < kSequencesPerRecording; ++s) {
            Sequence seq;
            seq.index = s;
            for (int i = 0; i < kFramesPerSequence; ++i) {
                const auto& pf = path[static_cast<std::size_t>(starts[s] + i)];
                FrameRecord fr;
                fr.gt = {quantize6(pf.gaze.yaw_deg), quantize6(pf.gaze.pitch_deg)};
                if (std::abs(fr.gt.yaw_deg) > 90.0 || std::abs(fr.gt.pitch_deg) > 90.0) {
                    throw GenerationError("ground truth outside +-90 deg");
                }
                fr.label = pf.label;
                fr.t_ms = pf.t_ms;
                const std::uint64_t frame_seed = derive_seed(
                    seed, {tag(SeedStream::kFrameNoise), sid, static_cast<std::uint64_t>(side),
                           static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(i)});
                fr.frame = render_eye(fr.gt, app, params.noise_sigma, frame_seed, side);
                seq.frames.push_back(std::move(fr));
            }
            rec.sequences.push_back(std::move(seq));
        }
        validate(rec);
    }
    return out;
}

inline std::size_t expected_frame_count(int n_subjects) {
    return static_cast<std::size_t>(n_subjects) * 2 * kSequencesPerRecording * kFramesPerSequence;
}

/// Generates, persists and indexes a synthetic corpus. Subjects are generated
/// on up to `threads` workers; the manifest is written last.
inline DatasetManifest build_dataset(int n_subjects, std::uint64_t seed, const std::filesystem::path& out_dir,
                                     const GenerationParams& params = {}, int threads = 1) {
    if (n_subjects < 8) throw InvalidInput("build_dataset: need at least 8 subjects");
    validate(params.oculomotor);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw PersistenceError("cannot create '" + out_dir.string() + "': " + ec.message());

    DatasetManifest m;
    m.root = std::filesystem::absolute(out_dir).lexically_normal().string();
    m.n_subjects = n_subjects;
    m.seed = seed;
    m.params = params;
    std::vector<int> ids(static_cast<std::size_t>(n_subjects));
    for (int i = 0; i < n_subjects; ++i) {
        ids[static_cast<std::size_t>(i)] = i;
        m.subjects.push_back(sample_subject(i, seed));
        validate(m.subjects.back());
    }
    const auto split = split_subjects(ids, seed);
    for (int id : split.train) m.split[id] = Split::kTrain;
    for (int id : split.val) m.split[id] = Split::kVal;
    for (int id : split.test) m.split[id] = Split::kTest;

    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (int id = next++; id < n_subjects; id = next++) {
            try {
                for (const auto& rec : generate_subject(id, seed, params, m.subjects[static_cast<std::size_t>(id)])) {
                    write_recording(out_dir, rec);
                }
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int n_workers = std::clamp(threads, 1, n_subjects);
    std::vector<std::thread> pool;
    for (int t = 1; t < n_workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    m.n_frames = expected_frame_count(n_subjects);
    write_file(layout::manifest_file(out_dir), to_json(m).dump(2) + "\n");
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& root) {
    const std::string text = read_file(layout::manifest_file(root));
    try {
        return manifest_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
}

/// Identity of a corpus independent of where it is stored: the manifest
/// content without its root path.
inline std::uint64_t manifest_hash(const DatasetManifest& m) {
    nlohmann::json j = to_json(m);
    j.erase("root");
    const std::string text = j.dump();
    Fnv1a64 h;
    h.update(text.data(), text.size());
    return h.digest();
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Content digest over the manifest, every ground-truth file and every frame.
inline std::uint64_t dataset_digest(const std::filesystem::path& root) {
    const auto m = load_manifest(root);
    Fnv1a64 h;
    const std::uint64_t mh = manifest_hash(m);
    h.update(&mh, sizeof(mh));
    for (int id = 0; id < m.n_subjects; ++id) {
        for (Side side : {Side::kLeft, Side::kRight}) {
            for (int s = 0; s < kSequencesPerRecording; ++s) {
                const auto dir = layout::sequence_dir(root, id, side, s);
                const std::string gt = read_file(dir / "gt.csv");
                h.update(gt.data(), gt.size());
                for (int f = 0; f < kFramesPerSequence; ++f) {
                    const std::string px = read_file(layout::frame_file(dir, f));
                    h.update(px.data(), px.size());
                }
            }
        }
    }
    return h.digest();
}

/// In-memory corpus restricted to a set of splits.
struct Dataset {
    DatasetManifest manifest;
    std::vector<Recording> recordings;  ///< ordered by (subject, side)
};

inline Dataset load_dataset(const std::filesystem::path& root, std::set<Split> splits = {Split::kTrain, Split::kVal,
                                                                                        Split::kTest}) {
    Dataset d;
    d.manifest = load_manifest(root);
    for (const auto& [id, split] : d.manifest.split) {
        if (!splits.contains(split)) continue;
        for (Side side : {Side::kLeft, Side::kRight}) d.recordings.push_back(read_recording(root, id, side));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

struct WindowSpan {
    int first = 0;
    int last = 0;  ///< inclusive; the frame whose gaze the window predicts
};

/// Stride windows of length s over a sequence of `length` frames.
inline std::vector<WindowSpan> window_spans(int length, int s, int stride = 1) {
    if (s < 1 || s > length) throw InvalidInput("windows: window length must lie in [1, sequence length]");
    if (stride < 1) throw InvalidInput("windows: stride must be positive");
    std::vector<WindowSpan> spans;
    for (int k = 0; k + s <= length; k += stride) spans.push_back({k, k + s - 1});
    return spans;
}

/// Many-to-one training unit: s consecutive frames and the gaze of the last.
struct WindowSample {
    std::vector<EyeFrame> frames;
    GazeAngles target;
    int last_frame_index = 0;
    int sequence_index = 0;
    int subject_id = 0;
    Side source_side = Side::kLeft;
};

/// Maps right-eye samples onto left-eye geometry: mirrored pixels, negated yaw.
/// Samples whose frames are already left-side pass through unchanged.
inline WindowSample normalize_side(WindowSample sample) {
    if (sample.frames.empty() || sample.frames.front().side == Side::kLeft) return sample;
    for (auto& f : sample.frames) f = mirror_image(f);
    sample.target = mirror_angles(sample.target);
    return sample;
}

inline std::vector<WindowSample> windows(const Recording& rec, int sequence_index, int s, int stride = 1) {
    const auto& seq = rec.sequences.at(static_cast<std::size_t>(sequence_index));
    std::vector<WindowSample> out;
    for (const auto& span : window_spans(static_cast<int>(seq.frames.size()), s, stride)) {
        WindowSample w;
        for (int i = span.first; i <= span.last; ++i) w.frames.push_back(seq.frames[static_cast<std::size_t>(i)].frame);
        w.target = seq.frames[static_cast<std::size_t>(span.last)].gt;
        w.last_frame_index = span.last;
        w.sequence_index = sequence_index;
        w.subject_id = rec.subject_id;
        w.source_side = rec.side;
        out.push_back(normalize_side(std::move(w)));
    }
    return out;
}

}  // namespace gazeseq
