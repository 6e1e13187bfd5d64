// nurdstab: stabilize rotationally scanned polar image streams.
//
//   nurdstab synth      generate clean + distorted synthetic streams
//   nurdstab train      fit the convolutional warp estimator on a synth run
//   nurdstab stabilize  correct a stream with the full fusion pipeline
//   nurdstab eval       stream quality metrics, artifacts, and comparisons
//   nurdstab calibrate  build an aligned sheath reference stack
//
// Every command takes --config <json> whose keys mirror the flag names
// (without dashes); explicit flags override config values.  Outputs go to a
// fresh --out location which is removed again if the command fails partway.

#include <nurdstab/fusion.hpp>
#include <nurdstab/io.hpp>
#include <nurdstab/metrics.hpp>
#include <nurdstab/synth.hpp>
#include <nurdstab/train.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nurdstab;

namespace {

constexpr const char* kUsage = R"(usage: nurdstab <command> [flags]

commands:
  synth      --out DIR (--procedural [--streams N --frames K --height H --width W
             --scan-mode internal_pullback|robotic_outer|stationary]
             | --in DIR) [--flat-target --rotate-span DEG] [--amplitude X|auto]
             [--smoothness S --drift D --augment --seed N]
  train      --in SYNTH_DIR --out MODEL [--epochs N --lr X --alpha A --batch B
             --seed N --log CSV --crop-begin C --crop-end C]
  stabilize  --in STREAM --out DIR [--model FILE --estimator cnn|gs
             --reference STACK --no-overall --no-nurd --kp X --ki X
             --match-window W --crop-begin C --crop-end C --log CSV]
  eval       --in STREAM --out DIR [--against STREAM --truth WARPS_CSV
             --est WARPS_CSV --std-window N --tau X]
  calibrate  --in STREAM --out DIR [--band-begin C --band-end C
             --surface-begin C --min-gradient X --buffer N]

Flags expect a value (--flag value) except the switches --procedural,
--flat-target, --augment, --no-overall, --no-nurd.  NURDSTAB_THREADS caps
internal parallelism.
)";

const std::set<std::string> kSwitches = {"procedural", "flat-target", "augment",
                                         "no-overall", "no-nurd", "help"};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Args {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) != 0; }

    std::string str(const std::string& key, const std::string& fallback = "") const {
        auto it = values.find(key);
        return it == values.end() ? fallback : it->second;
    }

    std::string require(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw UsageError("missing required flag --" + key);
        return it->second;
    }

    long integer(const std::string& key, long fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            std::size_t pos = 0;
            const long v = std::stol(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw UsageError("--" + key + " expects an integer, got '" + it->second + "'");
        }
    }

    double number(const std::string& key, double fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw UsageError("--" + key + " expects a number, got '" + it->second + "'");
        }
    }

    bool flag(const std::string& key) const {
        auto it = values.find(key);
        return it != values.end() && it->second != "false";
    }
};

Args parse_args(int argc, char** argv, int begin, const std::set<std::string>& allowed) {
    Args args;
    std::map<std::string, std::string> from_flags;
    for (int i = begin; i < argc; ++i) {
        std::string token = argv[i];
        if (token.rfind("--", 0) != 0) throw UsageError("unexpected argument '" + token + "'");
        token = token.substr(2);
        if (token != "help" && token != "config" && !allowed.count(token))
            throw UsageError("unknown flag --" + token + " for this command");
        if (kSwitches.count(token)) {
            from_flags[token] = "true";
        } else {
            if (i + 1 >= argc) throw UsageError("flag --" + token + " expects a value");
            from_flags[token] = argv[++i];
        }
    }
    if (auto it = from_flags.find("config"); it != from_flags.end()) {
        std::ifstream in(it->second);
        if (!in) throw ConfigError("cannot open config file " + it->second);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError("malformed config file " + it->second + ": " + e.what());
        }
        if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (value.is_string())
                args.values[key] = value.get<std::string>();
            else if (value.is_boolean())
                args.values[key] = value.get<bool>() ? "true" : "false";
            else if (value.is_number_integer())
                args.values[key] = std::to_string(value.get<long>());
            else if (value.is_number())
                args.values[key] = std::to_string(value.get<double>());
            else
                throw ConfigError("config key '" + key + "' has an unsupported type");
        }
    }
    for (auto& [key, value] : from_flags) args.values[key] = value;  // flags win
    return args;
}

// Creates the output location and deletes it again unless disarmed, so a
// failed command never leaves partial artifacts behind.
class OutGuard {
public:
    explicit OutGuard(fs::path path, bool directory = true) : path_(std::move(path)) {
        if (fs::exists(path_) && (!fs::is_directory(path_) || !fs::is_empty(path_)))
            throw ConfigError("output " + path_.string() + " already exists; refusing to overwrite");
        if (directory)
            fs::create_directories(path_);
        else if (path_.has_parent_path())
            fs::create_directories(path_.parent_path());
        armed_ = true;
    }

    ~OutGuard() {
        if (!armed_) return;
        std::error_code ec;
        fs::remove_all(path_, ec);
    }

    void disarm() { armed_ = false; }

private:
    fs::path path_;
    bool armed_ = false;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("short write to " + path.string());
}

void write_enface_pgm(const fs::path& path, const EnfaceImage& image) {
    BScan canvas(image.height, image.frames);
    for (std::size_t i = 0; i < image.values.size(); ++i)
        canvas.pixels[i] = static_cast<float>(std::clamp(image.values[i], 0.0, 1.0));
    write_pgm(path, canvas, 16);
}

std::string stream_tag(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%03zu", index);
    return buf;
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const Args& args) {
    const fs::path out = args.require("out");
    const bool procedural = args.flag("procedural");
    const bool flat = args.flag("flat-target");
    const std::uint64_t seed = static_cast<std::uint64_t>(args.integer("seed", 1));

    SynthConfig cfg;
    cfg.smoothness = args.number("smoothness", 8.0);
    cfg.drift_per_frame = args.number("drift", 0.0);
    if (args.flag("augment"))
        cfg.augment = {.geometric = true, .noise = true, .brightness_contrast = true,
                       .speckle = true, .shadow = true};
    const std::string amplitude_arg = args.str("amplitude", "0");
    const bool auto_amplitude = amplitude_arg == "auto";
    if (!auto_amplitude) cfg.amplitude = args.number("amplitude", 0.0);
    cfg.seed = seed;
    cfg.validate();

    // gather clean sources: procedural phantoms or user-supplied stream dirs
    std::vector<FrameStream> sources;
    if (procedural || flat) {
        const long streams = args.integer("streams", 1);
        if (streams < 1) throw ConfigError("--streams must be at least 1");
        if (auto_amplitude)
            throw ConfigError("--amplitude auto measures observed scans; it needs --in");
        PhantomConfig pc;
        pc.frames = static_cast<int>(args.integer("frames", 500));
        pc.height = static_cast<int>(args.integer("height", 512));
        pc.width = static_cast<int>(args.integer("width", 256));
        pc.scan_mode = flat ? ScanMode::Stationary
                            : scan_mode_from_name(args.str("scan-mode", "robotic_outer"));
        for (long s = 0; s < streams; ++s) {
            pc.seed = Rng(seed).fork(500 + static_cast<std::uint64_t>(s)).bits();
            sources.push_back(flat ? make_flat_target_stream(pc) : make_phantom_stream(pc));
        }
    } else {
        const fs::path in = args.require("in");
        if (fs::exists(in / "manifest.json") && fs::exists(in / "frame_00000.pgm")) {
            sources.push_back(read_stream(in));
        } else {
            std::vector<fs::path> dirs;
            for (const auto& entry : fs::directory_iterator(in))
                if (entry.is_directory() && fs::exists(entry.path() / "manifest.json") &&
                    fs::exists(entry.path() / "frame_00000.pgm"))
                    dirs.push_back(entry.path());
            std::sort(dirs.begin(), dirs.end());
            for (const fs::path& dir : dirs) sources.push_back(read_stream(dir));
        }
        if (sources.empty()) throw ConfigError("no streams found under " + in.string());
    }

    if (auto_amplitude) {
        double lo = 0.0, hi = 0.0;
        for (const FrameStream& s : sources) {
            const auto [a, b] = measure_nurd_range(s);
            lo = std::min(lo, a);
            hi = std::max(hi, b);
        }
        cfg.amplitude = expand_range(lo, hi);
        std::cout << "amplitude auto: observed [" << lo << ", " << hi << "] -> "
                  << cfg.amplitude << " A-lines\n";
    }
    const double rotate_span_deg = args.number("rotate-span", 0.0);
    if (flat && cfg.amplitude > 0.0)
        throw ConfigError("--flat-target injects whole-frame rotations, not NURD; "
                          "drop --amplitude or use --procedural");
    if (!flat && rotate_span_deg != 0.0)
        throw ConfigError("--rotate-span only applies to --flat-target stacks");

    OutGuard guard(out);
    json manifest;
    manifest["procedural"] = procedural || flat;
    manifest["flat_target"] = flat;
    manifest["seed"] = seed;
    manifest["amplitude"] = cfg.amplitude;
    manifest["smoothness"] = cfg.smoothness;
    manifest["drift_per_frame"] = cfg.drift_per_frame;
    manifest["augment"] = cfg.augment.noise;
    manifest["rotate_span_deg"] = rotate_span_deg;
    manifest["sources"] = json::array();

    for (std::size_t s = 0; s < sources.size(); ++s) {
        const std::string tag = stream_tag(s);
        const int h = sources[s].frames[0].height;
        write_stream(out / tag / "raw", sources[s]);

        FrameStream distorted;
        if (flat) {
            // constant per-frame rotations, rescaled so the stack spans the
            // requested range exactly (up to integer rounding)
            const std::size_t n = sources[s].frames.size();
            Rng rot_rng = Rng(seed).fork(900 + s);
            std::vector<double> rot(n, 0.0);
            if (rotate_span_deg > 0.0 && n > 1) {
                double lo = 1e300, hi = -1e300;
                for (double& r : rot) {
                    r = rot_rng.uniform();
                    lo = std::min(lo, r);
                    hi = std::max(hi, r);
                }
                const double span_lines = rotate_span_deg * h / 360.0;
                for (double& r : rot)
                    r = std::floor(((r - lo) / (hi - lo) - 0.5) * span_lines + 0.5);
            }
            distorted.scan_mode = sources[s].scan_mode;
            for (std::size_t k = 0; k < n; ++k) {
                distorted.frames.push_back(apply_warp(sources[s].frames[k],
                                                      constant_warp(h, rot[k]),
                                                      Interp::NearestNeighbor));
                distorted.frames.back().frame_index = static_cast<long>(k);
                distorted.ground_truth_warps.push_back(constant_warp(h, rot[k]));
            }
        } else {
            SynthConfig stream_cfg = cfg;
            stream_cfg.seed = Rng(seed).fork(100 + s).bits();
            distorted = distort_stream(sources[s], stream_cfg);
        }
        write_stream(out / tag / "distorted", distorted);

        double lo = 1e300, hi = -1e300;
        for (const WarpVector& w : distorted.ground_truth_warps)
            for (double v : w) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        std::cout << tag << ": " << distorted.frames.size() << " frames, injected warp range ["
                  << lo << ", " << hi << "] A-lines\n";

        json entry;
        entry["id"] = tag;
        entry["raw"] = tag + "/raw";
        entry["distorted"] = tag + "/distorted";
        entry["frames"] = distorted.frames.size();
        entry["height"] = h;
        entry["width"] = sources[s].frames[0].width;
        manifest["sources"].push_back(entry);
    }

    if (!flat && cfg.drift_per_frame != 0.0 && !sources.empty()) {
        const int h = sources[0].frames[0].height;
        const double n = static_cast<double>(sources[0].frames.size()) - 1.0;
        std::cout << "injected precession " << cfg.drift_per_frame * n * 360.0 / h
                  << " deg over " << sources[0].frames.size() << " frames\n";
    }

    write_json(out / "manifest.json", manifest);
    guard.disarm();
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const Args& args) {
    const fs::path in = args.require("in");
    const fs::path out = args.require("out");

    std::ifstream mf(in / "manifest.json");
    if (!mf) throw ConfigError("no manifest.json under " + in.string() + "; run synth first");
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed manifest: ") + e.what());
    }

    SynthConfig synth_cfg;
    synth_cfg.amplitude = manifest.at("amplitude").get<double>();
    synth_cfg.smoothness = manifest.at("smoothness").get<double>();
    synth_cfg.drift_per_frame = manifest.at("drift_per_frame").get<double>();
    synth_cfg.seed = manifest.at("seed").get<std::uint64_t>();
    if (manifest.at("augment").get<bool>())
        synth_cfg.augment = {.geometric = true, .noise = true, .brightness_contrast = true,
                             .speckle = true, .shadow = true};

    std::vector<FrameStream> sources;
    for (const auto& entry : manifest.at("sources"))
        sources.push_back(read_stream(in / entry.at("raw").get<std::string>()));

    CorrelationConfig ccfg;
    ccfg.crop_begin = static_cast<int>(args.integer("crop-begin", 0));
    ccfg.crop_end = static_cast<int>(args.integer("crop-end", -1));

    std::cout << "building correlation maps from " << sources.size() << " streams...\n";
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset ds = make_dataset(sources, ccfg, synth_cfg);
    const auto t1 = std::chrono::steady_clock::now();
    std::cout << "dataset: " << ds.samples.size() << " pairs (train " << ds.train.size()
              << ", val " << ds.val.size() << ", test " << ds.test.size() << ") in "
              << std::chrono::duration<double>(t1 - t0).count() << " s\n";

    TrainConfig tcfg;
    tcfg.epochs = static_cast<int>(args.integer("epochs", tcfg.epochs));
    tcfg.batch_size = static_cast<int>(args.integer("batch", tcfg.batch_size));
    tcfg.learning_rate = args.number("lr", tcfg.learning_rate);
    tcfg.alpha = args.number("alpha", tcfg.alpha);
    tcfg.seed = static_cast<std::uint64_t>(args.integer("seed", 1));

    OutGuard guard(out, /*directory=*/false);
    const fs::path log_path =
        args.has("log") ? fs::path(args.str("log")) : fs::path(out).replace_extension(".csv");
    std::ofstream log(log_path);
    if (!log) throw IoError("cannot open " + log_path.string());

    NurdNet<float> net = NurdNet<float>::make(tcfg.seed);
    const TrainReport report = train_nurd_net(net, ds.samples, ds.train, ds.val, tcfg, &log);
    const auto t2 = std::chrono::steady_clock::now();
    net.save(out);

    std::cout << "best epoch " << report.best_epoch << ", val L2 " << report.best_val_l2
              << " A-lines^2; trained in "
              << std::chrono::duration<double>(t2 - t1).count() << " s\n"
              << "model -> " << out.string() << ", log -> " << log_path.string() << '\n';
    guard.disarm();
    return 0;
}

// ---------------------------------------------------------------------------
// stabilize

int cmd_stabilize(const Args& args) {
    const fs::path in = args.require("in");
    const fs::path out = args.require("out");
    const std::string estimator_name = args.str("estimator", "cnn");

    StabilizerConfig cfg;
    if (estimator_name == "cnn")
        cfg.fusion.estimator = Estimator::Cnn;
    else if (estimator_name == "gs")
        cfg.fusion.estimator = Estimator::GraphSearch;
    else
        throw UsageError("--estimator must be cnn or gs, got '" + estimator_name + "'");
    cfg.fusion.overall_rotation_enabled = !args.flag("no-overall");
    cfg.fusion.nurd_enabled = !args.flag("no-nurd");
    cfg.fusion.k_p = args.number("kp", cfg.fusion.k_p);
    cfg.fusion.k_i = args.number("ki", cfg.fusion.k_i);
    cfg.correlation.crop_begin = static_cast<int>(args.integer("crop-begin", 0));
    cfg.correlation.crop_end = static_cast<int>(args.integer("crop-end", -1));
    cfg.match_window = static_cast<int>(args.integer("match-window", cfg.match_window));

    const FrameStream input = read_stream(in);

    std::optional<NurdNet<float>> net;
    if (cfg.fusion.nurd_enabled && cfg.fusion.estimator == Estimator::Cnn) {
        if (!args.has("model"))
            throw ConfigError("--estimator cnn needs --model (or pass --no-nurd / --estimator gs)");
        net.emplace(NurdNet<float>::load(args.str("model")));
    }
    std::optional<ReferenceStack> reference;
    if (args.has("reference")) reference = load_reference_stack(args.str("reference"));
    if (input.scan_mode == ScanMode::InternalPullback && cfg.fusion.overall_rotation_enabled &&
        !reference)
        throw ConfigError("pullback streams need --reference (the sheath changes along the "
                          "pullback); robotic/stationary streams fall back to frame 0");

    OutGuard guard(out);
    Stabilizer stab(cfg, net ? &*net : nullptr, reference ? &*reference : nullptr,
                    input.scan_mode, static_cast<long>(input.frames.size()));

    FrameStream corrected;
    corrected.scan_mode = input.scan_mode;
    std::vector<WarpVector> corrections;
    std::ostringstream log;
    log << "frame,rotation_increment,rotation,correction_min,correction_mean,correction_max,"
           "estimator_fallback,rotation_fallback\n";
    long fallbacks = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < input.frames.size(); ++k) {
        StepResult res = stab.step(input.frames[k]);
        double lo = 0.0, hi = 0.0, mean = 0.0;
        if (!res.correction.empty()) {
            lo = *std::min_element(res.correction.begin(), res.correction.end());
            hi = *std::max_element(res.correction.begin(), res.correction.end());
            for (double v : res.correction) mean += v;
            mean /= static_cast<double>(res.correction.size());
        }
        log << k << ',' << res.rotation_increment << ',' << res.rotation << ',' << lo << ','
            << mean << ',' << hi << ',' << (res.estimator_fallback ? 1 : 0) << ','
            << (res.rotation_fallback ? 1 : 0) << '\n';
        if (res.estimator_fallback || res.rotation_fallback) {
            ++fallbacks;
            if (fallbacks <= 3) std::cerr << "frame " << k << ": " << res.warning << '\n';
        }
        corrections.push_back(std::move(res.total_warp));
        corrected.frames.push_back(std::move(res.corrected));
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_stream(out, corrected);
    write_warps_csv(out / "corrections.csv", corrections);
    const fs::path log_path = args.has("log") ? fs::path(args.str("log")) : out / "log.csv";
    std::ofstream log_file(log_path);
    if (!log_file || !(log_file << log.str())) throw IoError("cannot write " + log_path.string());

    std::cout << corrected.frames.size() << " frames in " << elapsed << " s ("
              << static_cast<double>(corrected.frames.size()) / elapsed << " fps)";
    if (fallbacks) std::cout << ", " << fallbacks << " frames fell back";
    std::cout << '\n';
    guard.disarm();
    return 0;
}

// ---------------------------------------------------------------------------
// eval

json stream_metrics(const FrameStream& stream, const MetricsConfig& mcfg) {
    json j;
    const StdReport report = stream_std(stream, mcfg);
    const MeanStd counts = mpc(stream, mcfg);
    j["sigma"] = report.sigma;
    j["mpc_mean"] = counts.mean;
    j["mpc_std"] = counts.std;
    try {
        const EnfaceImage ef = enface(stream);
        j["precession_deg"] = precession(ef);
        const MeanStd fluct = local_fluctuation(ef);
        j["local_fluct_mean_deg"] = fluct.mean;
        j["local_fluct_std_deg"] = fluct.std;
    } catch (const MetricUnavailable& e) {
        std::cerr << "ridge metrics unavailable: " << e.what() << '\n';
        j["precession_deg"] = nullptr;
        j["local_fluct_mean_deg"] = nullptr;
        j["local_fluct_std_deg"] = nullptr;
    }
    return j;
}

double reduction_percent(double before, double after) {
    return before == 0.0 ? 0.0 : (before - after) / before * 100.0;
}

int cmd_eval(const Args& args) {
    const fs::path in = args.require("in");
    const fs::path out = args.require("out");

    MetricsConfig mcfg;
    mcfg.std_window = static_cast<int>(args.integer("std-window", mcfg.std_window));
    mcfg.unstable_threshold = args.number("tau", mcfg.unstable_threshold);
    mcfg.validate();

    const FrameStream stream = read_stream(in);
    OutGuard guard(out);

    json report;
    report["stream"] = stream_metrics(stream, mcfg);
    write_enface_pgm(out / "enface.pgm", enface(stream));
    for (std::size_t k : {std::size_t{0}, stream.frames.size() / 2})
        if (k + 2 < stream.frames.size()) {
            char name[40];
            std::snprintf(name, sizeof name, "rgb_%04zu.ppm", k);
            write_ppm(out / name, rgb_encode(stream, k));
        }

    if (args.has("against")) {
        const FrameStream baseline = read_stream(args.str("against"));
        if (baseline.height() != stream.height() || baseline.width() != stream.width())
            throw ContractError("compared streams have different frame shapes");
        report["baseline"] = stream_metrics(baseline, mcfg);
        write_enface_pgm(out / "baseline_enface.pgm", enface(baseline));

        json red;
        for (const char* key : {"sigma", "mpc_mean", "precession_deg", "local_fluct_mean_deg"}) {
            const json& b = report["baseline"][key];
            const json& a = report["stream"][key];
            red[key] = (b.is_null() || a.is_null())
                           ? json(nullptr)
                           : json(reduction_percent(b.get<double>(), a.get<double>()));
            if (!red[key].is_null())
                std::cout << key << ": " << b.get<double>() << " -> " << a.get<double>() << " ("
                          << red[key].get<double>() << "% reduction)\n";
        }
        report["reduction_percent"] = red;
    }

    if (args.has("truth")) {
        const std::vector<WarpVector> truth = read_warps_csv(args.str("truth"));
        const fs::path est_path =
            args.has("est") ? fs::path(args.str("est")) : in / "corrections.csv";
        const std::vector<WarpVector> est = read_warps_csv(est_path);
        // a correction is judged against the exact inverse of the injected warp;
        // the absolute figure keeps the frame-0 gauge (the pipeline aligns to
        // frame 0, never to the unseen clean source), the centered one drops it
        std::vector<WarpVector> target;
        target.reserve(truth.size());
        for (const WarpVector& w : truth) target.push_back(invert_warp(w));
        report["nurd_mse_deg2"] = nurd_mse(est, target).total_deg2;

        double offset = 0.0;
        std::size_t entries = 0;
        for (std::size_t k = 0; k < est.size(); ++k) {
            if (est[k].size() != target[k].size())
                throw ContractError("estimated and true warps have different heights");
            for (std::size_t i = 0; i < est[k].size(); ++i) offset += est[k][i] - target[k][i];
            entries += est[k].size();
        }
        offset /= static_cast<double>(entries);
        std::vector<WarpVector> centered = est;
        for (WarpVector& w : centered)
            for (double& v : w) v -= offset;
        report["nurd_mse_centered_deg2"] = nurd_mse(centered, target).total_deg2;
        std::cout << "nurd_mse " << report["nurd_mse_deg2"].get<double>() << " deg^2 ("
                  << report["nurd_mse_centered_deg2"].get<double>() << " centered)\n";
    }

    write_json(out / "metrics.json", report);
    std::cout << "sigma " << report["stream"]["sigma"].get<double>() << ", mpc "
              << report["stream"]["mpc_mean"].get<double>() << " +/- "
              << report["stream"]["mpc_std"].get<double>() << '\n';
    guard.disarm();
    return 0;
}

// ---------------------------------------------------------------------------
// calibrate

int cmd_calibrate(const Args& args) {
    const fs::path in = args.require("in");
    const fs::path out = args.require("out");

    SheathMask mask;
    mask.band_begin = static_cast<int>(args.integer("band-begin", mask.band_begin));
    mask.band_end = static_cast<int>(args.integer("band-end", mask.band_end));
    CalibrationConfig ccfg;
    ccfg.surface_begin = static_cast<int>(args.integer("surface-begin", ccfg.surface_begin));
    ccfg.min_gradient = args.number("min-gradient", ccfg.min_gradient);

    const FrameStream raw = read_stream(in);
    ReferenceStack stack = calibrate_reference(raw.frames, mask, ccfg);
    stack.buffer_length = static_cast<int>(args.integer("buffer", stack.buffer_length));

    OutGuard guard(out);
    save_reference_stack(stack, out);
    std::cout << "rotational spread " << stack.residual_before_deg << " deg -> "
              << stack.residual_after_deg << " deg ("
              << reduction_percent(stack.residual_before_deg, stack.residual_after_deg)
              << "% reduction) over " << stack.frames.size() << " frames\n";
    guard.disarm();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2 || std::string(argv[1]) == "--help" || std::string(argv[1]) == "help") {
        std::cout << kUsage;
        return argc < 2 ? 2 : 0;
    }
    const std::string command = argv[1];
    static const std::map<std::string, std::set<std::string>> kFlags = {
        {"synth",
         {"out", "in", "procedural", "flat-target", "streams", "frames", "height", "width",
          "scan-mode", "amplitude", "smoothness", "drift", "augment", "rotate-span", "seed"}},
        {"train",
         {"in", "out", "epochs", "batch", "lr", "alpha", "seed", "log", "crop-begin",
          "crop-end"}},
        {"stabilize",
         {"in", "out", "model", "reference", "estimator", "no-overall", "no-nurd", "kp", "ki",
          "match-window", "crop-begin", "crop-end", "log"}},
        {"eval", {"in", "out", "against", "truth", "est", "std-window", "tau"}},
        {"calibrate",
         {"in", "out", "band-begin", "band-end", "surface-begin", "min-gradient", "buffer"}},
    };
    try {
        const auto flags_it = kFlags.find(command);
        if (flags_it == kFlags.end()) throw UsageError("unknown command '" + command + "'");
        const Args args = parse_args(argc, argv, 2, flags_it->second);
        if (args.flag("help")) {
            std::cout << kUsage;
            return 0;
        }
        if (command == "synth") return cmd_synth(args);
        if (command == "train") return cmd_train(args);
        if (command == "stabilize") return cmd_stabilize(args);
        if (command == "eval") return cmd_eval(args);
        return cmd_calibrate(args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << kUsage;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
