// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0

// nisf: data generation, prior training, latent inference, evaluation,
// plane sampling and gradient checks from the command line.
//
// Exit codes: 0 success, 1 contract or configuration error, 2 numerical
// failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nisf/nisf.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nisf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitContract = 1;
constexpr int kExitNumerical = 2;

// ---------------------------------------------------------------------------
// Small helpers

/// UTC timestamp; SOURCE_DATE_EPOCH pins it for reproducible output trees.
std::string utc_now() {
    std::time_t t = std::time(nullptr);
    if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) {
        try {
            t = static_cast<std::time_t>(std::stoll(e));
        } catch (const std::exception&) {
            throw ContractError("SOURCE_DATE_EPOCH is not an integer");
        }
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

template <class T>
std::vector<T> parse_list(const std::string& text, std::size_t expected, const std::string& what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !(is >> std::ws).eof()) throw ContractError(what + ": cannot parse '" + item + "'");
        out.push_back(v);
    }
    if (expected && out.size() != expected) {
        throw ContractError(what + ": expected " + std::to_string(expected) + " comma-separated values, got '" +
                            text + "'");
    }
    return out;
}

std::array<double, 3> parse_vec3(const std::string& text, const std::string& what) {
    const auto v = parse_list<double>(text, 3, what);
    return {v[0], v[1], v[2]};
}

std::array<double, 3> normalized(std::array<double, 3> v, const std::string& what) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (!(n > 0)) throw ContractError(what + " must be non-zero");
    for (double& x : v) x /= n;
    return v;
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
void prepare_output(const fs::path& dir, bool force) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ContractError(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir)) {
            if (!force) throw ContractError("output directory " + dir.string() + " is not empty; pass --force to replace it");
            for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
        }
    }
    fs::create_directories(dir);
}

void write_text(const fs::path& p, const std::string& s) { detail::write_file(p, s); }

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::size_t resolve_threads(long flag) { return flag > 0 ? static_cast<std::size_t>(flag) : default_threads(); }

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
    std::string command;
    json config;
    json inputs = json::object();
    json outputs = json::object();
    std::uint64_t seed = 0;
    std::string started;
    std::string finished;
    std::string status = "running";
    std::string error;
    fs::path dir;

    json to_json() const {
        json j{{"command", command},      {"config", config},   {"inputs", inputs},
               {"outputs", outputs},      {"seed", seed},       {"code_version", kVersion},
               {"started_at", started},   {"status", status}};
        if (!finished.empty()) j["finished_at"] = finished;
        if (!error.empty()) j["error"] = error;
        return j;
    }
    void write() const { write_text(dir / "run_manifest.json", to_json().dump(2) + "\n"); }
    void begin() {
        started = utc_now();
        write();
    }
    void complete() {
        status = "completed";
        finished = utc_now();
        write();
    }
};

/// Manifest of the running command, kept global so a failure can still be
/// recorded in it after the command unwinds.
RunManifest g_run;
bool g_run_active = false;

RunManifest& open_manifest(const fs::path& dir, const std::string& command) {
    g_run = RunManifest{};
    g_run.dir = dir;
    g_run.command = command;
    g_run_active = true;
    return g_run;
}

// ---------------------------------------------------------------------------
// Checkpoint helpers

template <class Real>
void save_model_with_meta(const FieldModel<Real>& model, const std::vector<std::pair<std::string, std::string>>& meta,
                          const fs::path& path) {
    Checkpoint c;
    c.kind = "model";
    c.scalar = scalar_tag<Real>();
    detail::put_model(c, model);
    for (const auto& [k, v] : meta) c.set(k, v);
    write_checkpoint(c, path);
}

template <class Fn>
auto with_precision(const std::string& scalar, Fn&& fn) {
    if (scalar == "f32") return fn(float{});
    if (scalar == "f64") return fn(double{});
    throw ContractError("precision must be f32 or f64, got '" + scalar + "'");
}

/// Labels of the phantom that generated `vol`, when its id names one.
std::optional<PhantomSpec> phantom_of(const VolumeSample& vol) {
    const std::string prefix = "phantom_";
    if (vol.subject_id.rfind(prefix, 0) != 0) return std::nullopt;
    try {
        std::size_t used = 0;
        const std::string tail = vol.subject_id.substr(prefix.size());
        const std::uint64_t seed = std::stoull(tail, &used);
        if (used != tail.size()) return std::nullopt;
        PhantomSpec spec = draw_phantom_spec(seed, vol.shape);
        if (phantom_spacing(vol.shape) != std::array<double, 3>{vol.spacing[0], vol.spacing[1], vol.spacing[2]})
            return std::nullopt;
        return spec;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

void check_coord_dim(const ModelConfig& mc, const VolumeSample& vol) {
    if (mc.coord_dim != 3 && mc.coord_dim != 4) {
        throw DimensionError("checkpoint model takes " + std::to_string(mc.coord_dim) +
                             "-D coordinates; volumes need 3-D or 4-D");
    }
    if (mc.coord_dim == 3 && vol.shape[3] != 1) {
        throw DimensionError("checkpoint model takes 3-D coordinates but volume " + vol.subject_id + " has " +
                             std::to_string(vol.shape[3]) + " time frames");
    }
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
    std::string out;
    std::size_t subjects = 0;
    std::string split;
    std::uint64_t seed = 7;
    std::string shape = "32,32,8,10";
    bool force = false;

    json to_json() const {
        return {{"out", out}, {"subjects", subjects}, {"split", split}, {"seed", seed}, {"shape", shape}};
    }
};

SplitCounts resolve_split(const GenDataOptions& o) {
    const SplitCounts desk{};
    if (!o.split.empty()) {
        const auto v = parse_list<std::size_t>(o.split, 3, "--split");
        SplitCounts c{v[0], v[1], v[2]};
        if (o.subjects && o.subjects != c.total()) {
            throw ContractError("--subjects " + std::to_string(o.subjects) + " does not match --split total " +
                                std::to_string(c.total()));
        }
        return c;
    }
    if (!o.subjects || o.subjects == desk.total()) return desk;
    SplitCounts c;
    c.validation = o.subjects * desk.validation / desk.total();
    c.test = o.subjects * desk.test / desk.total();
    c.train = o.subjects - c.validation - c.test;
    return c;
}

int cmd_gen_data(const GenDataOptions& o) {
    const fs::path out = o.out;
    prepare_output(out, o.force);
    RunManifest& rm = open_manifest(out, "gen-data");
    rm.config = o.to_json();
    rm.seed = o.seed;
    rm.outputs = {{"dataset_manifest", "dataset.json"}, {"volumes", "volumes/"}, {"class_fractions", "class_fractions.csv"}};
    rm.begin();

    const auto sv = parse_list<std::size_t>(o.shape, 4, "--shape");
    const GridShape shape{sv[0], sv[1], sv[2], sv[3]};
    for (std::size_t a : shape) {
        if (a < 1) throw ContractError("--shape extents must be >= 1");
    }
    const SplitCounts counts = resolve_split(o);
    const DatasetManifest m = plan_dataset(o.seed, counts, shape);
    fs::create_directories(out / "volumes");

    const bool check_bounds = shape == GridShape{32, 32, 8, 10};
    std::ostringstream csv;
    csv << "subject_id,split";
    for (const auto& n : class_names()) csv << ',' << n;
    csv << '\n';
    std::size_t violations = 0;
    std::string first_violation;
    for (const auto& e : m.subjects) {
        const VolumeSample v = generate_subject(e.seed, shape).volume;
        save_volume(v, out / e.path);
        const auto f = class_fractions(v);
        csv << e.subject_id << ',' << split_name(e.split);
        for (double x : f) csv << ',' << fmt(x);
        csv << '\n';
        if (!check_bounds) continue;
        for (std::size_t k = 0; k < f.size(); ++k) {
            if (f[k] < kClassFractionBounds[k][0] || f[k] > kClassFractionBounds[k][1]) {
                if (!violations++) first_violation = e.subject_id + " class " + class_names()[k];
            }
        }
    }
    save_manifest(m, out / "dataset.json");
    write_text(out / "class_fractions.csv", csv.str());
    std::cout << "wrote " << m.subjects.size() << " subjects (" << counts.train << " train, " << counts.validation
              << " validation, " << counts.test << " test) to " << out.string() << '\n';
    if (check_bounds) {
        if (violations) {
            throw NumericalError(std::to_string(violations) + " class fractions outside the generator bounds, first " +
                                 first_violation);
        }
        std::cout << "class fractions within generator bounds for every subject\n";
    }
    rm.complete();
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train-prior

struct TrainOptions {
    std::string dataset;
    std::string out;
    std::size_t epochs = 1;
    double lr = 1e-4;
    double latent_lr = 0;
    double alpha = 10.0;
    double lambda_theta = 1e-6;
    double lambda_h = 1e-4;
    std::size_t latent_dim = 128;
    std::size_t width = 128;
    std::size_t layers = 8;
    double omega0 = 10.0;
    double s0 = 5.0;
    double coord_scale = InitOptions{}.coord_scale;
    double latent_gain = InitOptions{}.latent_gain;
    std::size_t points_per_step = 0;
    std::size_t checkpoint_every = 10;
    std::uint64_t seed = 0;
    std::string precision = "f64";
    bool resume = false;
    bool force = false;
    long threads = 0;
    std::size_t val_steps = 0;
    double lr_infer = 1e-4;
    std::size_t val_cadence = 25;
    std::size_t val_points = 0;

    /// Settings that must match between a checkpoint and a resumed run.
    json training_identity() const {
        return {{"dataset", fs::weakly_canonical(dataset).string()},
                {"lr", lr},
                {"latent_lr", latent_lr},
                {"alpha", alpha},
                {"lambda_theta", lambda_theta},
                {"lambda_h", lambda_h},
                {"latent_dim", latent_dim},
                {"width", width},
                {"layers", layers},
                {"omega0", omega0},
                {"s0", s0},
                {"coord_scale", coord_scale},
                {"latent_gain", latent_gain},
                {"points_per_step", points_per_step},
                {"seed", seed},
                {"precision", precision}};
    }
    json to_json() const {
        json j = training_identity();
        j["dataset"] = dataset;
        j["out"] = out;
        j["epochs"] = epochs;
        j["checkpoint_every"] = checkpoint_every;
        j["resume"] = resume;
        j["threads"] = resolve_threads(threads);
        j["val_steps"] = val_steps;
        j["lr_infer"] = lr_infer;
        j["val_cadence"] = val_cadence;
        j["val_points"] = val_points;
        return j;
    }
};

std::string epoch_checkpoint_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%06zu.ckpt", epoch);
    return buf;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
    if (!fs::is_directory(dir)) return std::nullopt;
    std::optional<fs::path> best;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string n = e.path().filename().string();
        if (n.rfind("epoch_", 0) == 0 && e.path().extension() == ".ckpt") {
            if (!best || n > best->filename().string()) best = e.path();
        }
    }
    return best;
}

/// Rows of an existing training log whose epoch precedes `epochs_done`.
std::vector<std::string> kept_log_rows(const fs::path& log, std::size_t epochs_done) {
    std::vector<std::string> keep;
    std::ifstream in(log);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        const auto a = line.find(','), b = line.find(',', a + 1);
        if (a == std::string::npos || b == std::string::npos) continue;
        if (std::stoull(line.substr(a + 1, b - a - 1)) < epochs_done) keep.push_back(line);
    }
    return keep;
}

struct LogTail {
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    double final_epoch_mean = std::numeric_limits<double>::quiet_NaN();
    std::size_t rows = 0;
};

LogTail summarize_log(const fs::path& log) {
    LogTail t;
    std::ifstream in(log);
    std::string line;
    std::getline(in, line);
    std::size_t last_epoch = 0, n = 0;
    double sum = 0;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() < 5) continue;
        const std::size_t epoch = std::stoull(f[1]);
        const double total = std::stod(f[4]);
        if (epoch != last_epoch || t.rows == 0) {
            last_epoch = epoch;
            sum = 0;
            n = 0;
        }
        sum += total;
        ++n;
        t.final_loss = total;
        ++t.rows;
    }
    if (n) t.final_epoch_mean = sum / static_cast<double>(n);
    return t;
}

template <class Real>
int train_prior_run(const TrainOptions& o, RunManifest& rm) {
    const fs::path out = o.out, ckdir = out / "checkpoints", log_path = out / "train_log.csv";
    const fs::path data = o.dataset;
    const DatasetManifest dm = load_manifest(data / "dataset.json");
    std::vector<VolumeSample> train, val;
    for (const auto& e : dm.subjects) {
        if (e.split == Split::train) train.push_back(load_volume(data / e.path));
        if (e.split == Split::validation && o.val_steps > 0) val.push_back(load_volume(data / e.path));
    }
    if (train.empty()) throw ContractError("dataset " + data.string() + " has no training subjects");

    ModelConfig mc;
    mc.latent_dim = o.latent_dim;
    mc.hidden_width = o.width;
    mc.num_residual_layers = o.layers;
    mc.gabor_omega0 = o.omega0;
    mc.gabor_s0 = o.s0;
    mc.validate();
    TrainConfig tc;
    tc.epochs = o.epochs;
    tc.adam.lr = o.lr;
    tc.latent_lr = o.latent_lr;
    tc.weights = {o.alpha, o.lambda_theta, o.lambda_h};
    tc.seed = o.seed;
    tc.checkpoint_every = o.checkpoint_every;
    tc.points_per_step = o.points_per_step;
    tc.validate();
    InitOptions io;
    io.coord_scale = o.coord_scale;
    io.latent_gain = o.latent_gain;
    const std::string identity = std::to_string(detail::fnv1a(o.training_identity().dump()));

    TrainState<Real> st;
    std::vector<std::string> carried;
    if (o.resume) {
        const auto ck = latest_checkpoint(ckdir);
        if (!ck) throw ContractError("--resume: no checkpoint in " + ckdir.string());
        const Checkpoint c = read_checkpoint(*ck);
        if (!c.has("training_identity") || c.get("training_identity") != identity) {
            throw ContractError("--resume: " + ck->string() + " was written with a different training configuration");
        }
        st = train_state_from_checkpoint<Real>(c);
        if (st.epochs_done > o.epochs) {
            throw ContractError("--resume: checkpoint is at epoch " + std::to_string(st.epochs_done) +
                                ", beyond --epochs " + std::to_string(o.epochs));
        }
        carried = kept_log_rows(log_path, st.epochs_done);
        rm.inputs["resumed_from"] = fs::relative(*ck, out).string();
        std::cout << "resuming from " << ck->string() << " at epoch " << st.epochs_done << '\n';
    } else {
        std::vector<std::string> ids;
        for (const auto& v : train) ids.push_back(v.subject_id);
        st = make_train_state<Real>(mc, ids, tc, io);
    }
    rm.write();
    fs::create_directories(ckdir);

    std::ofstream log(log_path, std::ios::trunc);
    log << TrainLogRow::csv_header() << '\n';
    for (const auto& line : carried) log << line << '\n';
    log.precision(17);

    auto save_checkpoint = [&](std::size_t epoch) {
        log.flush();
        Checkpoint c = train_state_checkpoint(st);
        c.set("training_identity", identity);
        write_checkpoint(c, ckdir / epoch_checkpoint_name(epoch));
    };
    TrainHooks hooks;
    hooks.on_step = [&](const TrainLogRow& r) { log << r << '\n'; };
    hooks.on_epoch_end = [&](std::size_t e) {
        if ((o.checkpoint_every && e % o.checkpoint_every == 0) || e == o.epochs) save_checkpoint(e);
        std::cout << "epoch " << e << "/" << o.epochs << '\n';
    };
    const auto t0 = std::chrono::steady_clock::now();
    train_prior(st, train, tc, hooks);
    log.close();

    json summary;
    summary["epochs_done"] = st.epochs_done;
    summary["steps_done"] = st.steps_done;
    const LogTail tail = summarize_log(log_path);
    summary["log_rows"] = tail.rows;
    summary["final_loss"] = tail.final_loss;
    summary["final_epoch_mean_loss"] = tail.final_epoch_mean;

    std::vector<std::pair<std::string, std::string>> meta{{"training_identity", identity}};
    if (!val.empty()) {
        InferConfig ic;
        ic.max_steps = o.val_steps;
        ic.lr_infer = o.lr_infer;
        ic.lambda_latent = o.lambda_h;
        ic.record_cadence = o.val_cadence;
        ic.points_per_step = o.val_points;
        ic.seed = o.seed;
        ic.threads = resolve_threads(o.threads);
        std::vector<ValidationCase<Real>> cases;
        for (const auto& v : val) cases.push_back(make_validation_case<Real>(v, mc.coord_dim, mc.num_classes));
        const ValidationResult vr = validate_prior(st.model, cases, ic);
        std::ostringstream csv;
        csv << "step,mean_dice\n";
        for (std::size_t i = 0; i < vr.steps.size(); ++i) csv << vr.steps[i] << ',' << fmt(vr.mean_dice[i]) << '\n';
        write_text(out / "validation_curve.csv", csv.str());
        summary["validation"] = {{"subjects", val.size()},
                                 {"steps", vr.steps},
                                 {"mean_dice", vr.mean_dice},
                                 {"selected_steps", vr.selected_steps}};
        summary["selected_steps"] = vr.selected_steps;
        meta.emplace_back("selected_steps", std::to_string(vr.selected_steps));
        rm.outputs["validation_curve"] = "validation_curve.csv";
        std::cout << "validation selected " << vr.selected_steps << " inference steps\n";
    }
    save_model_with_meta(st.model, meta, out / "model.ckpt");
    summary["model_checksum"] = st.model.checksum();
    summary["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(out / "summary.json", summary.dump(2) + "\n");
    std::cout << "final loss " << fmt(tail.final_loss) << '\n';
    return kExitOk;
}

int cmd_train_prior(const TrainOptions& o) {
    const fs::path out = o.out;
    if (o.resume) {
        if (!fs::is_directory(out)) throw ContractError("--resume: " + out.string() + " does not exist");
    } else {
        prepare_output(out, o.force);
    }
    RunManifest& rm = open_manifest(out, "train-prior");
    rm.config = o.to_json();
    rm.seed = o.seed;
    rm.inputs = {{"dataset", o.dataset}};
    rm.outputs = {{"checkpoints", "checkpoints/"}, {"train_log", "train_log.csv"}, {"model", "model.ckpt"},
                  {"summary", "summary.json"}};
    rm.begin();
    const int rc = with_precision(o.precision, [&](auto tag) { return train_prior_run<decltype(tag)>(o, rm); });
    rm.complete();
    return rc;
}

// ---------------------------------------------------------------------------
// infer

struct InferOptions {
    std::string model;
    std::string volume;
    std::string out;
    long steps = -1;
    double lr_infer = 1e-4;
    double lambda_h = 1e-4;
    double init_sigma = 1e-2;
    std::size_t cadence = 25;
    std::size_t points_per_step = 0;
    std::uint64_t seed = 0;
    bool analysis = false;
    bool force = false;
    long threads = 0;

    json to_json() const {
        json j{{"model", model},       {"volume", volume},     {"out", out},
               {"lr_infer", lr_infer}, {"lambda_h", lambda_h}, {"init_sigma", init_sigma},
               {"cadence", cadence},   {"points_per_step", points_per_step},
               {"seed", seed},         {"analysis", analysis}, {"threads", resolve_threads(threads)}};
        j["steps"] = steps >= 0 ? json(steps) : json(nullptr);
        return j;
    }
};

std::string trace_csv(const InferenceTrace& trace, std::size_t num_classes) {
    std::ostringstream s;
    s << "step,recon_loss,total_loss,latent_norm";
    for (std::size_t k = 1; k < num_classes; ++k) s << ",dice_" << k;
    s << ",mean_dice\n";
    for (const auto& r : trace.rows) {
        s << r.step << ',' << fmt(r.recon_loss) << ',' << fmt(r.total_loss) << ',' << fmt(r.latent_norm);
        for (std::size_t k = 1; k < num_classes; ++k) {
            s << ',';
            if (r.dice.size() == num_classes - 1) s << fmt(r.dice[k - 1]);
        }
        s << ',';
        if (!r.dice.empty()) s << fmt(r.mean_dice);
        s << '\n';
    }
    return s.str();
}

template <class Real>
int infer_run(const InferOptions& o, const Checkpoint& ck, RunManifest& rm) {
    const fs::path out = o.out;
    if (ck.kind != "model" && ck.kind != "train_state")
        throw FormatError(o.model + " holds a '" + ck.kind + "' checkpoint, not a model");
    const FieldModel<Real> model = detail::get_model<Real>(ck);
    const ModelConfig& mc = model.config();
    const VolumeSample vol = load_volume(o.volume);
    check_coord_dim(mc, vol);

    InferConfig ic;
    std::size_t steps = ic.selected_steps;
    if (o.steps >= 0) {
        steps = static_cast<std::size_t>(o.steps);
    } else if (ck.has("selected_steps")) {
        steps = ck.get_uint("selected_steps");
    }
    ic.selected_steps = steps;
    ic.max_steps = steps;
    ic.lr_infer = o.lr_infer;
    ic.lambda_latent = o.lambda_h;
    ic.init_sigma = o.init_sigma;
    ic.record_cadence = o.cadence;
    ic.points_per_step = o.points_per_step;
    ic.seed = subject_seed(o.seed, vol.subject_id);
    ic.threads = resolve_threads(o.threads);
    rm.config["resolved_steps"] = steps;
    rm.write();

    const PointBatch<Real> obs = make_observations<Real>(vol, mc.coord_dim, mc.num_classes);
    const PointBatch<Real> full = make_full_grid<Real>(vol, mc.coord_dim, mc.num_classes);
    std::optional<AnalysisTruth<Real>> truth;
    if (o.analysis) truth = AnalysisTruth<Real>{full.coords, full.labels};
    const InferenceResult<Real> r =
        infer_latent(model, obs.coords, obs.intensities, ic, truth ? &*truth : nullptr);

    save_latent(r.latent, vol.subject_id, model.checksum(), out / "latent.ckpt");
    write_text(out / "trace.csv", trace_csv(r.trace, mc.num_classes));
    const Prediction<Real> p = predict(model, r.latent, full.coords, ic.threads);
    VolumeSample pred;
    pred.subject_id = vol.subject_id;
    pred.shape = vol.shape;
    pred.spacing = vol.spacing;
    pred.intensity.assign(vol.voxel_count(), 0.0);
    pred.labels.assign(vol.voxel_count(), 0);
    for (std::size_t i = 0; i < full.size(); ++i) {
        pred.intensity[full.voxel_index[i]] = std::clamp(static_cast<double>(p.intensity[i]), 0.0, 1.0);
        pred.labels[full.voxel_index[i]] = p.labels[i];
    }
    save_volume(pred, out / "prediction.json");

    json summary{{"subject_id", vol.subject_id},
                 {"steps", steps},
                 {"observed_points", obs.size()},
                 {"trace_rows", r.trace.rows.size()},
                 {"final_recon_loss", r.trace.rows.back().recon_loss},
                 {"latent_norm", r.trace.rows.back().latent_norm},
                 {"model_checksum", model.checksum()}};
    if (truth) {
        const DiceReport d = dice_report(pred.labels, vol.labels, mc.num_classes);
        summary["dice"] = d.per_class;
        summary["mean_dice"] = d.mean;
        std::cout << "mean foreground Dice " << fmt(d.mean) << '\n';
    }
    write_text(out / "summary.json", summary.dump(2) + "\n");
    std::cout << "fitted latent after " << steps << " steps, reconstruction loss "
              << fmt(r.trace.rows.back().recon_loss) << '\n';
    return kExitOk;
}

int cmd_infer(const InferOptions& o) {
    const fs::path out = o.out;
    prepare_output(out, o.force);
    RunManifest& rm = open_manifest(out, "infer");
    rm.config = o.to_json();
    rm.seed = o.seed;
    rm.inputs = {{"model", o.model}, {"volume", o.volume}};
    rm.outputs = {{"latent", "latent.ckpt"}, {"trace", "trace.csv"}, {"prediction", "prediction.json"},
                  {"summary", "summary.json"}};
    rm.begin();
    const Checkpoint ck = read_checkpoint(o.model);
    const int rc = with_precision(ck.scalar, [&](auto tag) { return infer_run<decltype(tag)>(o, ck, rm); });
    rm.complete();
    return rc;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::vector<std::string> predictions;
    std::vector<std::string> truth;
    std::string split;
    std::string out;
    std::size_t classes = kNumPhantomClasses;
    bool force = false;

    json to_json() const {
        return {{"predictions", predictions}, {"truth", truth}, {"split", split}, {"out", out}, {"classes", classes}};
    }
};

bool is_volume_sidecar(const fs::path& p) {
    if (p.extension() != ".json" || !fs::is_regular_file(p)) return false;
    try {
        const json j = json::parse(detail::read_file(p));
        return j.is_object() && j.value("format", std::string()) == kVolumeFormat;
    } catch (const json::exception&) {
        return false;
    }
}

/// subject id -> sidecar path for every volume named by `paths`. Directories
/// holding a dataset manifest contribute its subjects (optionally one split);
/// other directories are searched recursively.
std::map<std::string, fs::path> collect_volumes(const std::vector<std::string>& paths, const std::string& split) {
    std::map<std::string, fs::path> found;
    auto add = [&](const std::string& id, const fs::path& p) {
        const auto [it, fresh] = found.emplace(id, p);
        if (!fresh && it->second != p)
            throw ContractError("subject " + id + " appears twice: " + it->second.string() + " and " + p.string());
    };
    for (const auto& s : paths) {
        const fs::path p = s;
        if (!fs::exists(p)) throw ContractError(p.string() + " does not exist");
        if (fs::is_directory(p) && fs::exists(p / "dataset.json")) {
            const DatasetManifest m = load_manifest(p / "dataset.json");
            for (const auto& e : m.subjects) {
                if (!split.empty() && split_name(e.split) != split) continue;
                add(e.subject_id, p / e.path);
            }
        } else if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(p)) {
                if (is_volume_sidecar(e.path())) files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) add(load_volume(f).subject_id, f);
        } else {
            add(load_volume(p).subject_id, p);
        }
    }
    return found;
}

int cmd_eval(const EvalOptions& o) {
    if (!o.split.empty()) parse_split(o.split);
    RunManifest* rm = nullptr;
    if (!o.out.empty()) {
        prepare_output(o.out, o.force);
        rm = &open_manifest(o.out, "eval");
        rm->config = o.to_json();
        rm->inputs = {{"predictions", o.predictions}, {"truth", o.truth}};
        rm->outputs = {{"dice_csv", "dice.csv"}, {"dice_json", "dice.json"}};
        rm->begin();
    }
    if (o.truth.empty()) throw ContractError("eval needs ground truth: pass --truth");
    const auto preds = collect_volumes(o.predictions, "");
    if (preds.empty()) throw ContractError("eval: no prediction volumes found");
    const auto truths = collect_volumes(o.truth, o.split);

    std::vector<std::string> labels;
    for (std::size_t k = 1; k < o.classes; ++k)
        labels.push_back(k < kNumPhantomClasses ? class_names()[k] : "class_" + std::to_string(k));
    std::ostringstream csv;
    csv << dice_csv_header(labels) << ",mae,psnr\n";
    std::vector<DiceReport> reports;
    json per_subject = json::array();
    for (const auto& [id, ppath] : preds) {
        const auto it = truths.find(id);
        if (it == truths.end()) throw ContractError("no ground truth for subject " + id);
        const VolumeSample p = load_volume(ppath), t = load_volume(it->second);
        if (p.shape != t.shape) throw DimensionError("subject " + id + ": prediction and truth shapes differ");
        const DiceReport d = dice_report(p.labels, t.labels, o.classes);
        const ReconstructionError e = reconstruction_error(p.intensity, t.intensity);
        reports.push_back(d);
        csv << dice_csv_row(id, d) << ',' << fmt(e.mae) << ',' << fmt(e.psnr) << '\n';
        per_subject.push_back({{"subject_id", id}, {"dice", d.per_class}, {"mean", d.mean}, {"mae", e.mae},
                               {"mse", e.mse}, {"psnr", std::isfinite(e.psnr) ? json(e.psnr) : json("inf")}});
    }
    const DiceReport agg = aggregate(reports);
    std::cout << format_dice_table(agg, labels);
    if (rm) {
        write_text(fs::path(o.out) / "dice.csv", csv.str());
        json j{{"subjects", agg.subjects},   {"classes", labels},
               {"mean", agg.per_class},      {"std", agg.per_class_std},
               {"classes_average", agg.mean}, {"classes_average_std", agg.mean_std},
               {"per_subject", per_subject}};
        write_text(fs::path(o.out) / "dice.json", j.dump(2) + "\n");
        rm->complete();
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sample-plane

struct PlaneOptions {
    std::string model;
    std::string latent;
    std::string volume;
    std::string out;
    std::string center;
    std::string dir_u = "1,0,0";
    std::string dir_v = "0,1,0";
    double extent_u = 0;
    double extent_v = 0;
    std::size_t nu = 0;
    std::size_t nv = 0;
    double frame = 0;
    long slice = -1;
    bool force = false;
    long threads = 0;

    json to_json() const {
        return {{"model", model},       {"latent", latent},     {"volume", volume}, {"out", out},
                {"center", center},     {"dir_u", dir_u},       {"dir_v", dir_v},   {"extent_u", extent_u},
                {"extent_v", extent_v}, {"nu", nu},             {"nv", nv},         {"frame", frame},
                {"slice", slice},       {"threads", resolve_threads(threads)}};
    }
};

PlaneSpec resolve_plane(const PlaneOptions& o, const VolumeSample& vol) {
    const VolumeGeometry g = VolumeGeometry::of(vol);
    std::array<double, 3> center{0.5 * g.length(0), 0.5 * g.length(1), 0.5 * g.length(2)};
    if (o.slice >= 0) {
        if (static_cast<std::size_t>(o.slice) >= vol.shape[2])
            throw ContractError("--slice " + std::to_string(o.slice) + " outside the volume");
        center[2] = static_cast<double>(o.slice) * vol.spacing[2];
    }
    if (!o.center.empty()) center = parse_vec3(o.center, "--center");
    const auto u = normalized(parse_vec3(o.dir_u, "--dir-u"), "--dir-u");
    auto v = normalized(parse_vec3(o.dir_v, "--dir-v"), "--dir-v");
    // Gram-Schmidt so nearly orthogonal user input is accepted.
    const double d = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    for (int a = 0; a < 3; ++a) v[a] -= d * u[a];
    v = normalized(v, "--dir-v after orthogonalisation");
    const double eu = o.extent_u > 0 ? o.extent_u : g.length(0);
    const double ev = o.extent_v > 0 ? o.extent_v : g.length(1);
    const std::size_t nu = o.nu ? o.nu : vol.shape[0];
    const std::size_t nv = o.nv ? o.nv : vol.shape[1];
    const double t = vol.shape[3] > 1 ? o.frame / static_cast<double>(vol.shape[3] - 1) : 0.0;
    return centered_plane(g, center, u, v, eu, ev, nu, nv, t);
}

std::vector<double> to_double(const std::vector<std::uint8_t>& v) { return {v.begin(), v.end()}; }

template <class Real>
int sample_plane_run(const PlaneOptions& o, const Checkpoint& ck, RunManifest& rm) {
    const fs::path out = o.out;
    if (ck.kind != "model" && ck.kind != "train_state")
        throw FormatError(o.model + " holds a '" + ck.kind + "' checkpoint, not a model");
    const FieldModel<Real> model = detail::get_model<Real>(ck);
    const LatentFile<Real> lf = load_latent<Real>(o.latent);
    if (lf.model_checksum != model.checksum())
        throw ContractError(o.latent + " was fitted against a different model");
    if (lf.latent.numel() != model.config().latent_dim) throw DimensionError("latent length does not match the model");
    const VolumeSample vol = load_volume(o.volume);
    check_coord_dim(model.config(), vol);
    const PlaneSpec plane = resolve_plane(o, vol);
    rm.config["plane"] = {{"origin", plane.origin}, {"dir_u", plane.dir_u},       {"dir_v", plane.dir_v},
                          {"nu", plane.nu},         {"nv", plane.nv},             {"extent_u", plane.extent_u},
                          {"extent_v", plane.extent_v}, {"t", plane.t}};
    rm.write();

    const FieldSamples<Real> s = sample_plane(model, lf.latent, plane, resolve_threads(o.threads));
    const std::vector<double> intensity(s.intensity.begin(), s.intensity.end());
    const ResampledImage nn = nearest_neighbor_resample(vol, plane);
    write_pgm(intensity_image(intensity, plane.nu, plane.nv), out / "model_intensity.pgm");
    write_pgm(label_image(s.labels, plane.nu, plane.nv), out / "model_labels.pgm");
    write_raw_f64(intensity, out / "model_intensity.raw");
    write_raw_f64(to_double(s.labels), out / "model_labels.raw");
    write_pgm(intensity_image(nn.intensity, plane.nu, plane.nv), out / "nn_intensity.pgm");
    write_pgm(label_image(nn.labels, plane.nu, plane.nv), out / "nn_labels.pgm");
    write_raw_f64(nn.intensity, out / "nn_intensity.raw");
    write_raw_f64(to_double(nn.labels), out / "nn_labels.raw");

    const std::size_t m = model.config().num_classes;
    json cmp{{"pixels", plane.size()},
             {"model_out_of_range", s.out_of_range},
             {"nn_out_of_volume", nn.out_of_volume},
             {"model_vs_nn_dice", dice_report(s.labels, nn.labels, m).per_class}};
    if (const auto spec = phantom_of(vol)) {
        const auto truth = phantom_plane_labels(*spec, plane);
        write_pgm(label_image(truth, plane.nu, plane.nv), out / "truth_labels.pgm");
        const DiceReport dm = dice_report(s.labels, truth, m), dn = dice_report(nn.labels, truth, m);
        cmp["model_dice"] = dm.per_class;
        cmp["model_mean_dice"] = dm.mean;
        cmp["nn_dice"] = dn.per_class;
        cmp["nn_mean_dice"] = dn.mean;
        std::cout << "oracle Dice: model " << fmt(dm.mean) << ", nearest neighbour " << fmt(dn.mean) << '\n';
    }
    write_text(out / "comparison.json", cmp.dump(2) + "\n");
    std::cout << "sampled " << plane.nu << "x" << plane.nv << " plane\n";
    return kExitOk;
}

int cmd_sample_plane(const PlaneOptions& o) {
    const fs::path out = o.out;
    prepare_output(out, o.force);
    RunManifest& rm = open_manifest(out, "sample-plane");
    rm.config = o.to_json();
    rm.inputs = {{"model", o.model}, {"latent", o.latent}, {"volume", o.volume}};
    rm.outputs = {{"images", "*.pgm"}, {"raw", "*.raw"}, {"comparison", "comparison.json"}};
    rm.begin();
    const Checkpoint ck = read_checkpoint(o.model);
    const int rc = with_precision(ck.scalar, [&](auto tag) { return sample_plane_run<decltype(tag)>(o, ck, rm); });
    rm.complete();
    return rc;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckCliOptions {
    std::uint64_t seed = 0;
    std::string out;
    double model_tolerance = 1e-4;
    double op_tolerance = 1e-6;
    bool force = false;

    json to_json() const {
        return {{"seed", seed}, {"out", out}, {"model_tolerance", model_tolerance}, {"op_tolerance", op_tolerance}};
    }
};

int cmd_gradcheck(const GradcheckCliOptions& o) {
    RunManifest* rm = nullptr;
    if (!o.out.empty()) {
        prepare_output(o.out, o.force);
        rm = &open_manifest(o.out, "gradcheck");
        rm->config = o.to_json();
        rm->seed = o.seed;
        rm->outputs = {{"report", "gradcheck.json"}};
        rm->begin();
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<GradcheckResult> results;
    GradcheckOptions mo{1e-5, o.model_tolerance, 1e-3};
    results.push_back(gradcheck_train_loss(o.seed, 6, mo));
    GradcheckOptions po;
    po.tolerance = o.op_tolerance;
    for (auto& r : gradcheck_ops(o.seed, po)) results.push_back(std::move(r));
    bool ok = true;
    json report = json::array();
    for (const auto& r : results) {
        ok = ok && r.pass();
        std::printf("%-4s %-18s checked %5zu  max rel error %.3e  (tol %.0e, worst %s)\n", r.pass() ? "ok" : "FAIL",
                    r.name.c_str(), r.checked, r.max_rel_error, r.tolerance, r.worst.c_str());
        report.push_back({{"name", r.name},
                          {"checked", r.checked},
                          {"max_rel_error", r.max_rel_error},
                          {"max_abs_error", r.max_abs_error},
                          {"worst", r.worst},
                          {"tolerance", r.tolerance},
                          {"pass", r.pass()}});
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("gradcheck %s in %.2f s\n", ok ? "passed" : "FAILED", secs);
    if (rm) {
        write_text(fs::path(o.out) / "gradcheck.json", json{{"pass", ok}, {"checks", report}}.dump(2) + "\n");
        if (ok) {
            rm->complete();
        } else {
            rm->status = "failed";
            rm->error = "gradient check exceeded tolerance";
            rm->finished = utc_now();
            rm->write();
        }
    }
    return ok ? kExitOk : kExitNumerical;
}

// ---------------------------------------------------------------------------
// Config files: a JSON object whose keys are long option names. The values
// are injected ahead of the command-line flags, so flags win.

std::vector<std::string> config_tokens(const json& j, const std::string& where) {
    if (!j.is_object()) throw ContractError(where + ": config must be a JSON object");
    std::vector<std::string> tokens;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = "--" + key;
        if (value.is_boolean()) {
            if (value.get<bool>()) tokens.push_back(flag);
        } else if (value.is_array()) {
            std::string joined;
            for (const auto& v : value) {
                if (!joined.empty()) joined += ',';
                joined += v.is_string() ? v.get<std::string>() : v.dump();
            }
            tokens.push_back(flag);
            tokens.push_back(joined);
        } else if (value.is_string()) {
            tokens.push_back(flag);
            tokens.push_back(value.get<std::string>());
        } else if (value.is_number()) {
            tokens.push_back(flag);
            tokens.push_back(value.dump());
        } else {
            throw ContractError(where + ": unsupported value for '" + key + "'");
        }
    }
    return tokens;
}

std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::optional<std::string> path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (!path) return args;
    json j;
    try {
        j = json::parse(detail::read_file(*path));
    } catch (const json::parse_error& e) {
        throw ContractError("config " + *path + " is not valid JSON: " + e.what());
    }
    const auto tokens = config_tokens(j, *path);
    std::size_t at = 0;
    while (at < args.size() && args[at].rfind("-", 0) == 0) ++at;
    if (at == args.size()) throw ContractError("--config needs a subcommand");
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(at) + 1, tokens.begin(), tokens.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural implicit segmentation fields: phantom data, prior training and latent inference"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.set_version_flag("--version", kVersion);
    std::string config_path;
    auto add_common = [&](CLI::App* sub) {
        sub->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        sub->add_option("--config", config_path, "JSON file of option values; flags override it");
    };

    GenDataOptions gen;
    auto* g = app.add_subcommand("gen-data", "Generate a phantom dataset with a split manifest");
    add_common(g);
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--subjects", gen.subjects, "Number of subjects (default: the split total)");
    g->add_option("--split", gen.split, "train,validation,test counts (default 60,10,20)");
    g->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
    g->add_option("--shape", gen.shape, "Grid x,y,z,t")->capture_default_str();
    g->add_flag("--force", gen.force, "Replace a non-empty output directory");

    TrainOptions tr;
    auto* t = app.add_subcommand("train-prior", "Train the shared model and the latent table");
    add_common(t);
    t->add_option("--dataset", tr.dataset, "Dataset directory from gen-data")->required();
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_option("--epochs", tr.epochs)->capture_default_str();
    t->add_option("--lr", tr.lr, "Adam rate for the network")->capture_default_str();
    t->add_option("--latent-lr", tr.latent_lr, "Adam rate for latent rows; 0 uses --lr")->capture_default_str();
    t->add_option("--alpha", tr.alpha, "Reconstruction weight")->capture_default_str();
    t->add_option("--lambda-theta", tr.lambda_theta, "Parameter L2 weight")->capture_default_str();
    t->add_option("--lambda-h", tr.lambda_h, "Latent L2 weight")->capture_default_str();
    t->add_option("--latent-dim", tr.latent_dim)->capture_default_str();
    t->add_option("--width", tr.width, "Hidden width")->capture_default_str();
    t->add_option("--layers", tr.layers, "Residual layers")->capture_default_str();
    t->add_option("--omega0", tr.omega0, "Gabor frequency")->capture_default_str();
    t->add_option("--s0", tr.s0, "Gabor envelope scale")->capture_default_str();
    t->add_option("--coord-scale", tr.coord_scale, "Init half-width of the coordinate weights")->capture_default_str();
    t->add_option("--latent-gain", tr.latent_gain, "Init gain of the latent weights")->capture_default_str();
    t->add_option("--points-per-step", tr.points_per_step, "Points sampled per frame; 0 uses all")
        ->capture_default_str();
    t->add_option("--checkpoint-every", tr.checkpoint_every, "Epochs between checkpoints")->capture_default_str();
    t->add_option("--seed", tr.seed)->capture_default_str();
    t->add_option("--precision", tr.precision, "f32 or f64")->capture_default_str();
    t->add_flag("--resume", tr.resume, "Continue from the latest checkpoint in --out");
    t->add_flag("--force", tr.force, "Replace a non-empty output directory");
    t->add_option("--threads", tr.threads, "Worker cap (default NISF_THREADS or 1)");
    t->add_option("--val-steps", tr.val_steps, "Inference budget for step selection; 0 skips validation")
        ->capture_default_str();
    t->add_option("--lr-infer", tr.lr_infer, "Adam rate for validation inference")->capture_default_str();
    t->add_option("--val-cadence", tr.val_cadence, "Steps between validation Dice records")->capture_default_str();
    t->add_option("--val-points", tr.val_points, "Observations per validation step; 0 uses all")
        ->capture_default_str();

    InferOptions inf;
    auto* i = app.add_subcommand("infer", "Fit a latent code to a volume with the network frozen");
    add_common(i);
    i->add_option("--model", inf.model, "Model or training checkpoint")->required();
    i->add_option("--volume", inf.volume, "Target volume sidecar")->required();
    i->add_option("--out", inf.out, "Output directory")->required();
    i->add_option("--steps", inf.steps, "Inference steps (default: the checkpoint's selected count)");
    i->add_option("--lr-infer", inf.lr_infer)->capture_default_str();
    i->add_option("--lambda-h", inf.lambda_h)->capture_default_str();
    i->add_option("--init-sigma", inf.init_sigma)->capture_default_str();
    i->add_option("--cadence", inf.cadence, "Steps between trace rows")->capture_default_str();
    i->add_option("--points-per-step", inf.points_per_step)->capture_default_str();
    i->add_option("--seed", inf.seed)->capture_default_str();
    i->add_flag("--analysis", inf.analysis, "Record Dice against the volume's labels in the trace");
    i->add_flag("--force", inf.force, "Replace a non-empty output directory");
    i->add_option("--threads", inf.threads, "Worker cap (default NISF_THREADS or 1)");

    EvalOptions ev;
    auto* e = app.add_subcommand("eval", "Dice and reconstruction error of predicted volumes");
    add_common(e);
    e->add_option("--predictions", ev.predictions, "Prediction volumes or directories")->required()->expected(1, -1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    e->add_option("--truth", ev.truth, "Dataset directory or ground-truth volumes")->expected(1, -1)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    e->add_option("--split", ev.split, "Restrict dataset truth to one split");
    e->add_option("--out", ev.out, "Directory for dice.csv and dice.json");
    e->add_option("--classes", ev.classes, "Label count including background")->capture_default_str();
    e->add_flag("--force", ev.force, "Replace a non-empty output directory");

    PlaneOptions pl;
    auto* s = app.add_subcommand("sample-plane", "Render an arbitrary plane from a fitted subject");
    add_common(s);
    s->add_option("--model", pl.model)->required();
    s->add_option("--latent", pl.latent, "Latent file from infer")->required();
    s->add_option("--volume", pl.volume, "Observed volume: geometry and nearest-neighbour baseline")->required();
    s->add_option("--out", pl.out)->required();
    s->add_option("--center", pl.center, "Plane centre x,y,z in mm (default: volume centre)");
    s->add_option("--dir-u", pl.dir_u, "In-plane direction u")->capture_default_str();
    s->add_option("--dir-v", pl.dir_v, "In-plane direction v")->capture_default_str();
    s->add_option("--extent-u", pl.extent_u, "Width in mm (default: volume x length)");
    s->add_option("--extent-v", pl.extent_v, "Height in mm (default: volume y length)");
    s->add_option("--nu", pl.nu, "Pixels along u (default: volume x extent)");
    s->add_option("--nv", pl.nv, "Pixels along v (default: volume y extent)");
    s->add_option("--frame", pl.frame, "Time in frames")->capture_default_str();
    s->add_option("--slice", pl.slice, "Axis-aligned plane through this z slice");
    s->add_flag("--force", pl.force, "Replace a non-empty output directory");
    s->add_option("--threads", pl.threads, "Worker cap (default NISF_THREADS or 1)");

    GradcheckCliOptions gc;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient suite on a tiny model");
    add_common(c);
    c->add_option("--seed", gc.seed)->capture_default_str();
    c->add_option("--out", gc.out, "Directory for gradcheck.json");
    c->add_option("--model-tolerance", gc.model_tolerance)->capture_default_str();
    c->add_option("--op-tolerance", gc.op_tolerance)->capture_default_str();
    c->add_flag("--force", gc.force, "Replace a non-empty output directory");

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(std::move(args));
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForVersion& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kExitContract;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kExitContract;
    }

    auto fail = [](const std::exception& err, int code) {
        std::cerr << "error: " << err.what() << '\n';
        if (g_run_active) {
            g_run.status = "failed";
            g_run.error = err.what();
            g_run.finished = utc_now();
            try {
                g_run.write();
            } catch (const std::exception&) {
            }
        }
        return code;
    };
    try {
        if (*g) return cmd_gen_data(gen);
        if (*t) return cmd_train_prior(tr);
        if (*i) return cmd_infer(inf);
        if (*e) return cmd_eval(ev);
        if (*s) return cmd_sample_plane(pl);
        if (*c) return cmd_gradcheck(gc);
    } catch (const NumericalError& err) {
        return fail(err, kExitNumerical);
    } catch (const std::exception& err) {
        return fail(err, kExitContract);
    }
    return kExitContract;
}
