#include "cfsynth/dataio.hpp"

#include "cfsynth/error.hpp"
#include "cfsynth/log.hpp"

namespace cfs::data {

namespace {

Image masked(const Image& frame, const Image& mask) {
    Image out = frame;
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x)
            for (int c = 0; c < frame.channels; ++c) out.at(y, x, c) *= mask.at(y, x, 0);
    return out;
}

}  // namespace

std::vector<WindowRef> sample_windows(const std::vector<ClipRecord>& records, const BatchOptions& options,
                                      std::mt19937_64& rng) {
    require(options.window >= 1, "window length must be at least 1");
    require(options.batch_size >= 1, "batch size must be at least 1");
    require(options.flip_probability >= 0 && options.flip_probability <= 1, "flip probability must be in [0, 1]");
    std::vector<int> usable;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].length() >= options.window)
            usable.push_back(static_cast<int>(i));
        else
            log::warn("skipping clip '" + records[i].clip_id + "': " + std::to_string(records[i].length()) +
                      " frames, window needs " + std::to_string(options.window));
    }
    require(!usable.empty(), "no clip has at least " + std::to_string(options.window) + " frames");

    std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<WindowRef> out;
    for (int b = 0; b < options.batch_size; ++b) {
        WindowRef w;
        w.clip = usable[pick(rng)];
        std::uniform_int_distribution<int> start(0, records[static_cast<std::size_t>(w.clip)].length() - options.window);
        w.start = start(rng);
        w.flipped = coin(rng) < options.flip_probability;
        out.push_back(w);
    }
    return out;
}

Sample materialize(const std::vector<ClipRecord>& records, const WindowRef& ref, int window, int reference_frame) {
    require(ref.clip >= 0 && ref.clip < static_cast<int>(records.size()), "window refers to a missing clip");
    const ClipRecord& rec = records[static_cast<std::size_t>(ref.clip)];
    require(ref.start >= 0 && window >= 1 && ref.start + window <= rec.length(), "window exceeds clip length");
    require(reference_frame >= 0 && reference_frame < rec.length(), "reference frame outside the clip");
    auto fl = [&](const Image& img) { return ref.flipped ? flip_horizontal(img) : img; };
    Sample s;
    s.ref = ref;
    for (int f = ref.start; f < ref.start + window; ++f) {
        const auto i = static_cast<std::size_t>(f);
        s.frames.push_back(fl(rec.frames[i]));
        s.masks.push_back(fl(rec.masks[i]));
        s.plates.push_back(fl(rec.plates[i]));
        s.pose_maps.push_back(fl(rec.pose_maps[i]));
    }
    const auto r = static_cast<std::size_t>(reference_frame);
    s.reference_mask = fl(rec.masks[r]);
    s.reference = masked(fl(rec.frames[r]), s.reference_mask);
    return s;
}

std::vector<Sample> make_batch(const std::vector<ClipRecord>& records, const BatchOptions& options,
                               std::mt19937_64& rng) {
    std::vector<Sample> out;
    for (const WindowRef& w : sample_windows(records, options, rng))
        out.push_back(materialize(records, w, options.window, options.reference_frame));
    return out;
}

}  // namespace cfs::data
