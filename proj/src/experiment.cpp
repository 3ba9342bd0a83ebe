#include "l3doc/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "l3doc/errors.hpp"

namespace l3doc::experiment {

namespace {

using nlohmann::json;

// Reads fields from one JSON object and rejects keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
    }

    template <typename T>
    void optional(const char* key, T& out) {
        seen_.insert(key);
        if (!obj_.contains(key)) return;
        try {
            out = obj_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong type");
        }
    }

    template <typename T>
    T required(const char* key) {
        if (!obj_.contains(key)) throw ConfigError(path_ + ": missing required key '" + key + "'");
        T out{};
        optional(key, out);
        return out;
    }

    [[nodiscard]] std::optional<ObjectReader> child(const char* key) {
        seen_.insert(key);
        if (!obj_.contains(key)) return std::nullopt;
        return ObjectReader(obj_.at(key), path_ + "." + key);
    }

    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            if (!seen_.contains(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
        }
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

// unsigned fields arrive as JSON numbers; reject negatives before they wrap
std::size_t read_count(ObjectReader& r, const char* key, std::size_t fallback) {
    long long v = static_cast<long long>(fallback);
    r.optional(key, v);
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
}

backbone::LossKind parse_loss(const std::string& s) {
    if (s == "squared_error") return backbone::LossKind::SquaredError;
    if (s == "cross_entropy") return backbone::LossKind::CrossEntropy;
    throw ConfigError("unknown loss '" + s + "' (expected squared_error or cross_entropy)");
}

train::OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return train::OptimizerKind::Adam;
    if (s == "sgd") return train::OptimizerKind::Sgd;
    throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

}  // namespace

RunConfig parse_config(const json& doc) {
    ObjectReader root(doc, "config");
    const int version = root.required<int>("schema_version");
    if (version != kSchemaVersion) throw ConfigError("unsupported schema_version " + std::to_string(version));

    RunConfig cfg;
    auto& ex = cfg.experiment;
    std::string mode = train::to_string(ex.mode);
    root.optional("mode", mode);
    ex.mode = train::parse_mode(mode);
    root.optional("seed", ex.seed);
    ex.epochs = read_count(root, "epochs", ex.epochs);
    ex.batch_size = read_count(root, "batch_size", ex.batch_size);
    std::string out_dir;
    root.optional("output_dir", out_dir);
    if (!out_dir.empty()) cfg.output_dir = out_dir;

    if (auto r = root.child("backbone")) {
        r->optional("widths", ex.backbone.widths);
        r->optional("head_widths", ex.backbone.head_widths);
        std::string loss = "squared_error";
        r->optional("loss", loss);
        ex.backbone.loss = parse_loss(loss);
        r->finish();
    }
    ex.backbone.validate();

    std::size_t n_hat = 16, l_hat = 32, s = 2;
    if (auto r = root.child("factorization")) {
        n_hat = read_count(*r, "n_hat", n_hat);
        l_hat = read_count(*r, "l_hat", l_hat);
        s = read_count(*r, "s", s);
        json sd;
        r->optional("init_stddev", sd);
        if (sd.is_number()) {
            ex.init_stddev = sd.get<double>();
        } else if (!sd.is_null()) {
            throw ConfigError("config.factorization.init_stddev: expected a number or null");
        }
        r->finish();
    }
    ex.spec = factor::FactorSpec(n_hat, l_hat, s, ex.backbone.widths);

    if (auto r = root.child("mam")) {
        r->optional("lambda", ex.mam.lambda);
        r->optional("detach_attention", ex.mam.detach_attention);
        r->finish();
    }

    if (auto r = root.child("optimizer")) {
        std::string kind = "adam";
        r->optional("kind", kind);
        ex.optimizer.kind = parse_optimizer(kind);
        r->optional("learning_rate", ex.optimizer.learning_rate);
        r->optional("beta1", ex.optimizer.beta1);
        r->optional("beta2", ex.optimizer.beta2);
        r->optional("epsilon", ex.optimizer.epsilon);
        r->finish();
    }

    auto data = root.child("data");
    if (!data) throw ConfigError("config: missing required key 'data'");
    const auto source = data->required<std::string>("source");
    if (source == "synthetic") {
        SyntheticSource syn;
        data->optional("classes", syn.classes);
        syn.num_tasks = read_count(*data, "num_tasks", syn.num_tasks);
        syn.classes_per_task = read_count(*data, "classes_per_task", syn.classes_per_task);
        syn.per_class = read_count(*data, "per_class", syn.per_class);
        syn.points = read_count(*data, "points", syn.points);
        data->optional("noise", syn.noise);
        const auto& known = data::synthetic_class_names();
        for (const auto& c : syn.classes) {
            if (std::find(known.begin(), known.end(), c) == known.end()) {
                throw ConfigError("unknown synthetic class '" + c + "'");
            }
        }
        if (syn.num_tasks == 0) throw ConfigError("data.num_tasks must be >= 1");
        if (syn.classes_per_task < 2 || syn.classes_per_task > syn.classes.size()) {
            throw ConfigError("data.classes_per_task must lie in [2, number of classes]");
        }
        if (syn.per_class < 2) throw ConfigError("data.per_class must be >= 2");
        if (syn.points == 0) throw ConfigError("data.points must be >= 1");
        if (!(syn.noise >= 0.0)) throw ConfigError("data.noise must be >= 0");
        cfg.data = syn;
    } else if (source == "directory") {
        DirectorySource dir;
        dir.root = data->required<std::string>("root");
        dir.num_tasks = read_count(*data, "num_tasks", dir.num_tasks);
        dir.classes_per_task = read_count(*data, "classes_per_task", dir.classes_per_task);
        dir.points = read_count(*data, "points", dir.points);
        if (dir.num_tasks == 0 || dir.classes_per_task < 2 || dir.points == 0) {
            throw ConfigError("data: num_tasks >= 1, classes_per_task >= 2 and points >= 1 required");
        }
        cfg.data = dir;
    } else {
        throw ConfigError("unknown data source '" + source + "' (expected synthetic or directory)");
    }
    data->finish();
    root.finish();

    if (ex.backbone.point_dim() != 3) throw ConfigError("backbone widths[0] must be 3 (xyz points)");
    ex.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

nlohmann::ordered_json to_json(const RunConfig& config) {
    const auto& ex = config.experiment;
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["mode"] = train::to_string(ex.mode);
    j["seed"] = ex.seed;
    j["epochs"] = ex.epochs;
    j["batch_size"] = ex.batch_size;
    if (config.output_dir) j["output_dir"] = config.output_dir->string();
    j["backbone"] = {{"widths", ex.backbone.widths},
                     {"head_widths", ex.backbone.head_widths},
                     {"loss", ex.backbone.loss == backbone::LossKind::SquaredError ? "squared_error" : "cross_entropy"}};
    j["factorization"] = {{"n_hat", ex.spec.n_hat()},
                          {"l_hat", ex.spec.l_hat()},
                          {"s", ex.spec.s()},
                          {"init_stddev", ex.init_stddev ? nlohmann::ordered_json(*ex.init_stddev) : nullptr}};
    j["mam"] = {{"lambda", ex.mam.lambda}, {"detach_attention", ex.mam.detach_attention}};
    j["optimizer"] = {{"kind", ex.optimizer.kind == train::OptimizerKind::Adam ? "adam" : "sgd"},
                      {"learning_rate", ex.optimizer.learning_rate},
                      {"beta1", ex.optimizer.beta1},
                      {"beta2", ex.optimizer.beta2},
                      {"epsilon", ex.optimizer.epsilon}};
    if (const auto* syn = std::get_if<SyntheticSource>(&config.data)) {
        j["data"] = {{"source", "synthetic"},       {"classes", syn->classes},
                     {"num_tasks", syn->num_tasks}, {"classes_per_task", syn->classes_per_task},
                     {"per_class", syn->per_class}, {"points", syn->points},
                     {"noise", syn->noise}};
    } else {
        const auto& dir = std::get<DirectorySource>(config.data);
        j["data"] = {{"source", "directory"},
                     {"root", dir.root.string()},
                     {"num_tasks", dir.num_tasks},
                     {"classes_per_task", dir.classes_per_task},
                     {"points", dir.points}};
    }
    return j;
}

namespace {

enum DataSeed : std::uint64_t { kSplitSeed = 101, kSynthSeed = 102, kLoadSeed = 103 };

}  // namespace

std::vector<data::TaskDataset> build_tasks(const RunConfig& config) {
    const std::uint64_t seed = config.experiment.seed;
    std::vector<data::TaskDataset> tasks;
    if (const auto* syn = std::get_if<SyntheticSource>(&config.data)) {
        const auto plan = data::make_split_plan(syn->classes, syn->num_tasks, syn->classes_per_task,
                                                train::derive_seed(seed, kSplitSeed, 0));
        for (std::size_t t = 0; t < plan.tasks.size(); ++t) {
            auto ds = data::gen_synthetic(plan.tasks[t], syn->per_class, syn->points, syn->noise,
                                          train::derive_seed(seed, kSynthSeed, t));
            for (auto* split : {&ds.train, &ds.test}) {
                for (auto& s : *split) s.cloud = data::normalize_unit_sphere(s.cloud);
            }
            ds.task_id = t + 1;
            tasks.push_back(std::move(ds));
        }
        return tasks;
    }
    const auto& dir = std::get<DirectorySource>(config.data);
    const auto classes = data::list_directory_classes(dir.root);
    const data::SplitPlan plan = [&] {
        try {
            return data::make_split_plan(classes, dir.num_tasks, dir.classes_per_task,
                                         train::derive_seed(seed, kSplitSeed, 0));
        } catch (const ConfigError& e) {
            throw DataError(std::string("dataset ") + dir.root.string() + ": " + e.what());
        }
    }();
    for (std::size_t t = 0; t < plan.tasks.size(); ++t) {
        auto ds = data::load_directory_task(dir.root, plan.tasks[t], dir.points, train::derive_seed(seed, kLoadSeed, t));
        ds.task_id = t + 1;
        tasks.push_back(std::move(ds));
    }
    return tasks;
}

}  // namespace l3doc::experiment
