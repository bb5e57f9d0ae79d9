#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "coordx/bench.hpp"
#include "coordx/errors.hpp"
#include "coordx/model.hpp"
#include "coordx/render.hpp"
#include "coordx/signals.hpp"
#include "coordx/train.hpp"

namespace coordx {

using json = nlohmann::json;

namespace detail {

/// Reads one JSON object, tracking which keys were consumed so leftovers
/// can be rejected with their full dotted path.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    void touch(const std::string& key) { used_.insert(key); }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    T get(const std::string& key, T fallback) {
        used_.insert(key);
        if (!has(key)) return fallback;
        return convert<T>(key);
    }

    template <class T>
    T require(const std::string& key) {
        used_.insert(key);
        if (!has(key)) throw ConfigError(name(key) + ": required field missing");
        return convert<T>(key);
    }

    Fields child(const std::string& key) {
        used_.insert(key);
        static const json empty = json::object();
        return Fields(has(key) ? j_.at(key) : empty, name(key));
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!used_.count(it.key())) throw ConfigError(name(it.key()) + ": unknown key");
        }
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    template <class T>
    T convert(const std::string& key) const {
        const json& v = j_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw ConfigError("");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.get<long long>() < 0) throw ConfigError("");
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            return v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError(name(key) + ": expected " + type_name<T>() + ", got " + v.dump());
        }
    }

    template <class T>
    static std::string type_name() {
        if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
        else if constexpr (std::is_integral_v<T>) return "an integer";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else if constexpr (std::is_same_v<T, std::string>) return "a string";
        else return "a list";
    }

    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <class E>
E parse_enum(const std::string& field, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
    std::string names;
    for (const auto& [n, e] : options) {
        if (v == n) return e;
        names += names.empty() ? n : std::string(", ") + n;
    }
    throw ConfigError(field + ": '" + v + "' is not one of {" + names + "}");
}

}  // namespace detail

enum class Task { image, video, occupancy };

inline std::string to_string(Task t) {
    switch (t) {
        case Task::image: return "image";
        case Task::video: return "video";
        case Task::occupancy: return "occupancy";
    }
    return "?";
}

struct SignalConfig {
    std::string source = "synthetic";  // synthetic | file
    std::string name;                  // synthetic signal name
    std::string path;                  // file source (PGM/PPM)
    Shape extents;                     // empty: per-signal default
    SignalParams params;
    std::uint64_t seed = 0;
};

struct SamplerConfig {
    std::size_t target_n = 0;  // 0: a quarter of the lattice
    bool continuous = false;
};

struct IoConfig {
    std::string out_dir = "runs/latest";
    std::uint64_t seed = 0;
    std::string checkpoint;  // input checkpoint for decompose / render
};

struct BenchConfig {
    std::vector<Shape> extents{{128, 128}, {256, 256}, {512, 512}, {1024, 1024}};
    int trials = 5;
    int warmup = 2;
    std::string precision = "f32";
};

struct RenderConfig {
    std::string mode = "slice";  // slice | raymarch
    std::size_t grid_resolution = 64;
    int axis = 2;
    double coordinate = 0.0;
    std::size_t resolution = 128;
    Camera camera{};
    MarchOptions march{};
};

struct RunConfig {
    Task task = Task::image;
    ModelSpec model{};
    TrainConfig train{};
    SignalConfig signal{};
    SamplerConfig sampler{};
    IoConfig io{};
    BenchConfig bench{};
    RenderConfig render{};
    json resolved;  // the input document after overrides
};

// ---------------------------------------------------------------------------
// ModelSpec <-> JSON (also the checkpoint header format)

inline json model_to_json(const ModelSpec& s) {
    json j{{"k", s.k},
           {"o", s.o},
           {"hidden", s.m},
           {"depth", s.depth},
           {"activation", to_string(s.activation.kind)},
           {"omega0", s.activation.omega0},
           {"encoding", to_string(s.encoding.kind)},
           {"frequencies", s.encoding.frequencies}};
    if (s.split) {
        j["split"] = {{"branches", s.split->branch_sizes}, {"d_f", s.split->d_f},
                      {"r", s.split->r},                   {"augment", to_string(s.split->augment)},
                      {"fusion", to_string(s.split->fusion)}};
    } else {
        j["split"] = nullptr;
    }
    return j;
}

/// `k`/`o` come from the task when absent.
inline ModelSpec model_from_json(const json& j, const std::string& path = "model", std::optional<int> k = {},
                                 std::optional<int> o = {}) {
    detail::Fields f(j, path);
    ModelSpec s;
    s.k = f.get<int>("k", k.value_or(2));
    s.o = f.get<int>("o", o.value_or(1));
    if (k && s.k != *k) throw ConfigError(f.name("k") + ": task needs k=" + std::to_string(*k));
    if (o && s.o != *o) throw ConfigError(f.name("o") + ": signal has o=" + std::to_string(*o));
    s.m = f.get<int>("hidden", 64);
    s.depth = f.get<int>("depth", 5);
    s.activation.kind = detail::parse_enum<ActivationKind>(f.name("activation"), f.get<std::string>("activation", "sine"),
                                                           {{"sine", ActivationKind::sine}, {"relu", ActivationKind::relu}});
    s.activation.omega0 = f.get<double>("omega0", 30.0);
    s.encoding.kind = detail::parse_enum<EncodingKind>(
        f.name("encoding"), f.get<std::string>("encoding", "none"),
        {{"none", EncodingKind::none}, {"positional", EncodingKind::positional}});
    if (s.encoding.kind == EncodingKind::positional) {
        s.encoding.frequencies = f.require<int>("frequencies");
    } else {
        s.encoding.frequencies = f.get<int>("frequencies", 0);
    }
    if (f.has("split")) {
        auto sp = f.child("split");
        SplitSpec split;
        if (sp.has("branches")) {
            split.branch_sizes = sp.get<std::vector<std::size_t>>("branches", {});
        } else {
            split.branch_sizes.assign(static_cast<std::size_t>(std::max(s.k, 0)), 1);
            sp.touch("branches");
        }
        split.d_f = sp.get<int>("d_f", 2);
        split.d_s = s.depth - split.d_f;
        split.r = sp.get<int>("r", 1);
        split.augment = detail::parse_enum<Augment>(
            sp.name("augment"), sp.get<std::string>("augment", "none"),
            {{"none", Augment::none}, {"plus", Augment::plus}, {"plusplus", Augment::plusplus}});
        split.fusion = detail::parse_enum<Fusion>(
            sp.name("fusion"), sp.get<std::string>("fusion", "product"),
            {{"product", Fusion::product}, {"sum", Fusion::sum}, {"concat", Fusion::concat}});
        sp.finish();
        s.split = split;
    } else {
        f.touch("split");  // null marks a baseline
    }
    f.finish();
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return s;
}

// ---------------------------------------------------------------------------
// Overrides

/// Applies `a.b.c=value`; the value is parsed as JSON when possible and
/// taken as a string otherwise. Intermediate objects are created.
inline void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("--set: empty path segment in '" + key + "'");
        parts.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
        if (!node->contains(parts[i]) || (*node)[parts[i]].is_null()) (*node)[parts[i]] = json::object();
        node = &(*node)[parts[i]];
    }
    if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
    (*node)[parts.back()] = std::move(value);
}

// ---------------------------------------------------------------------------
// RunConfig

namespace detail {

inline Vec3 vec3_field(Fields& f, const std::string& key, Vec3 fallback) {
    if (!f.has(key)) {
        f.touch(key);
        return fallback;
    }
    const auto v = f.get<std::vector<double>>(key, {});
    if (v.size() != 3) throw ConfigError(f.name(key) + ": expected 3 numbers");
    return {v[0], v[1], v[2]};
}

inline SignalConfig parse_signal(Fields f, Task task) {
    SignalConfig s;
    s.source = f.get<std::string>("source", "synthetic");
    if (s.source == "synthetic") {
        const char* fallback = task == Task::image ? "gaussians_image" : task == Task::video ? "moving_gaussian_video" : "sphere_occ";
        s.name = f.get<std::string>("name", fallback);
        const auto& names = synthetic_signal_names();
        if (std::find(names.begin(), names.end(), s.name) == names.end()) {
            throw ConfigError(f.name("name") + ": unknown synthetic signal '" + s.name + "'");
        }
    } else if (s.source == "file") {
        if (task != Task::image) throw ConfigError(f.name("source") + ": file signals are images only");
        s.path = f.require<std::string>("path");
    } else {
        throw ConfigError(f.name("source") + ": expected 'synthetic' or 'file'");
    }
    s.extents = f.get<Shape>("extents", {});
    for (auto e : s.extents) {
        if (e == 0) throw ConfigError(f.name("extents") + ": extents must be positive");
    }
    if (f.has("params")) {
        const json& p = f.raw("params");
        if (!p.is_object()) throw ConfigError(f.name("params") + ": expected an object of numbers");
        for (auto it = p.begin(); it != p.end(); ++it) {
            if (!it->is_number()) throw ConfigError(f.name("params") + "." + it.key() + ": expected a number");
            s.params[it.key()] = it->get<double>();
        }
    } else {
        f.touch("params");
    }
    s.seed = f.get<std::uint64_t>("seed", 0);
    f.finish();
    return s;
}

inline TrainConfig parse_train(Fields f, Task task) {
    TrainConfig t;
    t.epochs = f.get<int>("epochs", 2000);
    t.adam.lr = f.get<double>("lr", 1e-4);
    t.adam.beta1 = f.get<double>("beta1", 0.9);
    t.adam.beta2 = f.get<double>("beta2", 0.999);
    t.adam.eps = f.get<double>("eps", 1e-8);
    t.batch = parse_enum<BatchMode>(f.name("batch"), f.get<std::string>("batch", "full"),
                                    {{"full", BatchMode::full}, {"sampled", BatchMode::sampled}, {"random", BatchMode::random}});
    t.loss = parse_enum<LossKind>(f.name("loss"), f.get<std::string>("loss", task == Task::occupancy ? "bce" : "mse"),
                                  {{"mse", LossKind::mse}, {"bce", LossKind::bce}});
    t.eval_every = f.get<int>("eval_every", 100);
    t.iou_points = f.get<std::size_t>("iou_points", 10000);
    t.iou_band = f.get<double>("iou_band", 0.05);
    if (!(t.iou_band > 0)) throw ConfigError(f.name("iou_band") + ": must be > 0");
    f.finish();
    return t;
}

inline RenderConfig parse_render(Fields f) {
    RenderConfig r;
    r.mode = f.get<std::string>("mode", "slice");
    if (r.mode != "slice" && r.mode != "raymarch") throw ConfigError(f.name("mode") + ": expected 'slice' or 'raymarch'");
    r.grid_resolution = f.get<std::size_t>("grid_resolution", 64);
    if (r.grid_resolution < 2) throw ConfigError(f.name("grid_resolution") + ": must be >= 2");
    try {
        r.axis = parse_axis(f.get<std::string>("axis", "z"));
    } catch (const ConfigError& e) {
        throw ConfigError(f.name("axis") + ": " + e.what());
    }
    r.coordinate = f.get<double>("coordinate", 0.0);
    r.resolution = f.get<std::size_t>("resolution", 128);
    if (r.resolution < 2) throw ConfigError(f.name("resolution") + ": must be >= 2");
    r.march.sigma_scale = f.get<double>("sigma_scale", 10.0);
    r.march.albedo = f.get<double>("albedo", 1.0);
    r.march.background = f.get<double>("background", 0.0);
    auto c = f.child("camera");
    r.camera.origin = vec3_field(c, "origin", r.camera.origin);
    r.camera.look_at = vec3_field(c, "look_at", r.camera.look_at);
    r.camera.up = vec3_field(c, "up", r.camera.up);
    r.camera.fov_deg = c.get<double>("fov", r.camera.fov_deg);
    r.camera.width = c.get<std::size_t>("width", r.camera.width);
    r.camera.height = c.get<std::size_t>("height", r.camera.height);
    r.camera.t_near = c.get<double>("near", r.camera.t_near);
    r.camera.t_far = c.get<double>("far", r.camera.t_far);
    r.camera.samples = c.get<std::size_t>("samples", r.camera.samples);
    c.finish();
    try {
        r.camera.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(f.name("camera") + ": " + e.what());
    }
    f.finish();
    return r;
}

inline BenchConfig parse_bench(Fields f, int k) {
    BenchConfig b;
    if (f.has("extents")) {
        b.extents = f.get<std::vector<Shape>>("extents", {});
    } else {
        f.touch("extents");
        if (k == 3) b.extents = {{32, 32, 32}, {64, 64, 64}, {128, 128, 128}};
    }
    if (b.extents.empty()) throw ConfigError(f.name("extents") + ": need at least one lattice");
    for (const auto& e : b.extents) {
        if (e.size() != static_cast<std::size_t>(k)) throw ConfigError(f.name("extents") + ": every lattice needs " + std::to_string(k) + " extents");
        for (auto x : e) {
            if (x == 0) throw ConfigError(f.name("extents") + ": extents must be positive");
        }
    }
    b.trials = f.get<int>("trials", 5);
    if (b.trials < 5) throw ConfigError(f.name("trials") + ": at least 5 trials required");
    b.warmup = f.get<int>("warmup", 2);
    if (b.warmup < 0) throw ConfigError(f.name("warmup") + ": must be >= 0");
    b.precision = f.get<std::string>("precision", "f32");
    if (b.precision != "f32" && b.precision != "f64") throw ConfigError(f.name("precision") + ": expected 'f32' or 'f64'");
    f.finish();
    return b;
}

inline int task_dims(Task t) { return t == Task::image ? 2 : 3; }

}  // namespace detail

/// Builds the signal a config describes.
inline Signal make_signal(const SignalConfig& sc) {
    if (sc.source == "file") {
        auto s = load_image(sc.path);
        if (!sc.extents.empty() && sc.extents != s.extents) throw ConfigError("signal.extents: does not match image file");
        return s;
    }
    Rng rng(sc.seed);
    return synth_signal(sc.name, sc.params, rng, sc.extents);
}

inline Task task_for(SignalKind k) {
    return k == SignalKind::image2d ? Task::image : k == SignalKind::video3d ? Task::video : Task::occupancy;
}

/// Validates the whole document; signal metadata (k, o) is resolved by
/// building the signal, so file-backed images are read here.
inline RunConfig parse_run_config(const json& doc) {
    RunConfig rc;
    rc.resolved = doc;
    detail::Fields root(doc, "");
    rc.task = detail::parse_enum<Task>("task", root.require<std::string>("task"),
                                       {{"image", Task::image}, {"video", Task::video}, {"occupancy", Task::occupancy}});
    rc.signal = detail::parse_signal(root.child("signal"), rc.task);
    const Signal sig = make_signal(rc.signal);
    if (task_for(sig.kind) != rc.task) {
        throw ConfigError("signal.name: '" + sig.name + "' is not a " + to_string(rc.task) + " signal");
    }
    rc.model = model_from_json(root.has("model") ? root.raw("model") : json::object(), "model", sig.k, sig.o);
    rc.train = detail::parse_train(root.child("train"), rc.task);
    {
        auto sf = root.child("sampler");
        rc.sampler.target_n = sf.get<std::size_t>("target_n", 0);
        rc.sampler.continuous = sf.get<bool>("continuous", false);
        sf.finish();
    }
    {
        auto io = root.child("io");
        rc.io.out_dir = io.get<std::string>("out_dir", "runs/latest");
        rc.io.seed = io.get<std::uint64_t>("seed", 0);
        rc.io.checkpoint = io.get<std::string>("checkpoint", "");
        io.finish();
    }
    rc.bench = detail::parse_bench(root.child("bench"), sig.k);
    rc.render = detail::parse_render(root.child("render"));
    root.finish();

    std::size_t lattice = shape_product(sig.extents);
    rc.train.seed = rc.io.seed;
    rc.train.continuous = rc.sampler.continuous;
    rc.train.batch_points = rc.sampler.target_n ? rc.sampler.target_n : std::max<std::size_t>(1, lattice / 4);
    if (rc.train.batch == BatchMode::random && rc.model.is_split()) {
        throw ConfigError("train.batch: random batches are not decomposable; use 'sampled' with a split model");
    }
    if (rc.train.batch == BatchMode::sampled && !rc.model.is_split()) {
        throw ConfigError("train.batch: 'sampled' needs a split model");
    }
    if (!rc.sampler.continuous && rc.train.batch != BatchMode::full && rc.train.batch_points > lattice) {
        throw ConfigError("sampler.target_n: " + std::to_string(rc.train.batch_points) + " exceeds the lattice size " +
                          std::to_string(lattice));
    }
    if (rc.task == Task::occupancy && rc.train.loss != LossKind::bce) {
        throw ConfigError("train.loss: occupancy fitting uses 'bce'");
    }
    try {
        rc.train.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(e.what());
    }
    return rc;
}

inline json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config '" + path + "'");
    json doc = json::parse(is, nullptr, false, true);
    if (doc.is_discarded()) throw ConfigError(path + ": not valid JSON");
    return doc;
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    json doc = load_json_file(path);
    for (const auto& o : overrides) apply_override(doc, o);
    return parse_run_config(doc);
}

}  // namespace coordx
