#include "l3doc/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "l3doc/errors.hpp"

namespace l3doc::data {

void TaskDataset::validate() const {
    if (class_names.size() < 2) throw DataError("task " + std::to_string(task_id) + " needs at least 2 classes");
    if (train.empty() || test.empty()) throw DataError("task " + std::to_string(task_id) + " has an empty split");
    const Shape& shape = train.front().cloud.points.shape();
    for (const auto* split : {&train, &test}) {
        for (const auto& s : *split) {
            if (s.label >= class_names.size()) throw DataError("label out of range in task " + std::to_string(task_id));
            if (s.cloud.points.shape() != shape) {
                throw DataError("cloud " + s.cloud.source + " has shape " + shape_to_string(s.cloud.points.shape()) +
                                ", expected " + shape_to_string(shape));
            }
        }
    }
}

// OFF ----------------------------------------------------------------------

namespace {

struct Token {
    std::string_view text;
    std::size_t line;
};

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> tokens;
    std::size_t line = 1;
    std::size_t i = 0;
    while (i < text.size()) {
        const char ch = text[i];
        if (ch == '\n') {
            ++line;
            ++i;
        } else if (ch == '#') {
            while (i < text.size() && text[i] != '\n') ++i;
        } else if (std::isspace(static_cast<unsigned char>(ch))) {
            ++i;
        } else {
            const std::size_t start = i;
            while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i])) && text[i] != '#') ++i;
            tokens.push_back({text.substr(start, i - start), line});
        }
    }
    return tokens;
}

template <typename T>
T parse_number(const Token& tok, const char* what) {
    T value{};
    const auto* first = tok.text.data();
    const auto* last = first + tok.text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) {
        throw ParseError("expected " + std::string(what) + ", got '" + std::string(tok.text) + "'", tok.line);
    }
    return value;
}

class TokenStream {
public:
    explicit TokenStream(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

    const Token& next(const char* what) {
        if (pos_ >= tokens_.size()) {
            const std::size_t line = tokens_.empty() ? 1 : tokens_.back().line;
            throw ParseError("unexpected end of input, expected " + std::string(what), line);
        }
        return tokens_[pos_++];
    }

    void push_front(Token t) { tokens_.insert(tokens_.begin() + static_cast<std::ptrdiff_t>(pos_), t); }

private:
    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

}  // namespace

Mesh parse_off(std::string_view text) {
    TokenStream in(tokenize(text));
    const Token head = in.next("OFF header");
    if (head.text.substr(0, 3) != "OFF") throw ParseError("missing OFF header", head.line);
    if (head.text.size() > 3) in.push_front({head.text.substr(3), head.line});

    const Token& vtok = in.next("vertex count");
    const auto nv = parse_number<std::size_t>(vtok, "vertex count");
    const auto nf = parse_number<std::size_t>(in.next("face count"), "face count");
    parse_number<std::size_t>(in.next("edge count"), "edge count");

    Mesh mesh;
    mesh.vertices.reserve(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        std::array<double, 3> p{};
        for (auto& c : p) c = parse_number<double>(in.next("vertex coordinate"), "vertex coordinate");
        mesh.vertices.push_back(p);
    }
    for (std::size_t f = 0; f < nf; ++f) {
        const Token& ctok = in.next("face vertex count");
        const auto k = parse_number<std::size_t>(ctok, "face vertex count");
        if (k < 3) throw ParseError("face with fewer than 3 vertices", ctok.line);
        std::vector<std::size_t> idx(k);
        for (auto& i : idx) {
            const Token& t = in.next("face index");
            i = parse_number<std::size_t>(t, "face index");
            if (i >= nv) {
                throw ParseError("face index " + std::to_string(i) + " out of range for " + std::to_string(nv) +
                                     " vertices",
                                 t.line);
            }
        }
        for (std::size_t j = 1; j + 1 < k; ++j) mesh.faces.push_back({idx[0], idx[j], idx[j + 1]});
    }
    return mesh;
}

std::string serialize_off(const Mesh& mesh) {
    std::ostringstream out;
    out.precision(17);
    out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
    for (const auto& v : mesh.vertices) out << v[0] << ' ' << v[1] << ' ' << v[2] << '\n';
    for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    return out.str();
}

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 u = sub(b, a), v = sub(c, a);
    const double x = u[1] * v[2] - u[2] * v[1];
    const double y = u[2] * v[0] - u[0] * v[2];
    const double z = u[0] * v[1] - u[1] * v[0];
    return 0.5 * std::sqrt(x * x + y * y + z * z);
}

}  // namespace

PointCloud sample_mesh(const Mesh& mesh, std::size_t n_pts, std::uint64_t seed) {
    if (n_pts == 0) throw DataError("sample_mesh: n_pts must be positive");
    std::vector<double> cumulative;
    cumulative.reserve(mesh.faces.size());
    double total = 0.0;
    for (const auto& f : mesh.faces) {
        total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        cumulative.push_back(total);
    }
    if (!(total > 0.0)) throw DataError("sample_mesh: mesh has zero surface area");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor pts({n_pts, 3});
    for (std::size_t i = 0; i < n_pts; ++i) {
        const double r = unit(rng) * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
        if (it == cumulative.end()) --it;
        const auto& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
        const double r1 = std::sqrt(unit(rng));
        const double r2 = unit(rng);
        const double a = 1.0 - r1, b = r1 * (1.0 - r2), c = r1 * r2;
        for (std::size_t d = 0; d < 3; ++d) {
            pts[i * 3 + d] = a * mesh.vertices[f[0]][d] + b * mesh.vertices[f[1]][d] + c * mesh.vertices[f[2]][d];
        }
    }
    return {std::move(pts), {}};
}

// Point processing ---------------------------------------------------------

std::vector<std::size_t> farthest_point_sampling(const PointCloud& cloud, std::size_t k, std::size_t start_index) {
    const std::size_t n = cloud.num_points(), d = cloud.dim();
    if (k > n) throw DataError("farthest_point_sampling: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
    if (k == 0) return {};
    if (start_index >= n) throw DataError("farthest_point_sampling: start index out of range");

    const auto& p = cloud.points;
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(n, false);
    std::vector<std::size_t> out;
    out.reserve(k);
    std::size_t current = start_index;
    for (std::size_t step = 0; step < k; ++step) {
        out.push_back(current);
        taken[current] = true;
        std::size_t best = n;
        double best_dist = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = p[i * d + j] - p[current * d + j];
                dist += diff * diff;
            }
            min_dist[i] = std::min(min_dist[i], dist);
            if (min_dist[i] > best_dist) {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
    }
    return out;
}

PointCloud select_points(const PointCloud& cloud, const std::vector<std::size_t>& indices) {
    const std::size_t d = cloud.dim();
    Tensor pts({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) pts[i * d + j] = cloud.points[indices[i] * d + j];
    }
    return {std::move(pts), cloud.source};
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
    const std::size_t n = cloud.num_points(), d = cloud.dim();
    std::vector<double> centroid(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) centroid[j] += cloud.points[i * d + j];
    }
    for (auto& c : centroid) c /= static_cast<double>(n);
    Tensor pts = cloud.points;
    double radius = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            pts[i * d + j] -= centroid[j];
            r2 += pts[i * d + j] * pts[i * d + j];
        }
        radius = std::max(radius, std::sqrt(r2));
    }
    if (!(radius > 0.0)) throw DataError("normalize_unit_sphere: cloud has zero radius");
    for (auto& v : pts.data()) v /= radius;
    return {std::move(pts), cloud.source};
}

// PTS ----------------------------------------------------------------------

PointCloud parse_pts(std::string_view text) {
    TokenStream in(tokenize(text));
    const auto n = parse_number<std::size_t>(in.next("point count"), "point count");
    const Token& dtok = in.next("point dimension");
    const auto d = parse_number<std::size_t>(dtok, "point dimension");
    if (n == 0 || d == 0) throw ParseError("point count and dimension must be positive", dtok.line);
    Tensor pts({n, d});
    for (std::size_t i = 0; i < n * d; ++i) pts[i] = parse_number<double>(in.next("coordinate"), "coordinate");
    return {std::move(pts), {}};
}

std::string serialize_pts(const PointCloud& cloud) {
    const std::size_t n = cloud.num_points(), d = cloud.dim();
    std::string out = std::to_string(n) + ' ' + std::to_string(d) + '\n';
    char buf[32];
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, cloud.points[i * d + j]);
            if (j) out += ' ';
            out.append(buf, ptr);
        }
        out += '\n';
    }
    return out;
}

// Task splits --------------------------------------------------------------

SplitPlan make_split_plan(const std::vector<std::string>& class_names, std::size_t num_tasks,
                          std::size_t classes_per_task, std::uint64_t seed) {
    const std::set<std::string> unique(class_names.begin(), class_names.end());
    if (unique.size() != class_names.size()) throw ConfigError("make_split_plan: duplicate class names");
    if (classes_per_task == 0 || classes_per_task > class_names.size()) {
        throw ConfigError("make_split_plan: cannot draw " + std::to_string(classes_per_task) + " classes from " +
                          std::to_string(class_names.size()));
    }
    SplitPlan plan{seed, {}};
    std::mt19937_64 rng(seed);
    for (std::size_t t = 0; t < num_tasks; ++t) {
        std::vector<std::string> pool = class_names;
        std::vector<std::string> chosen;
        for (std::size_t c = 0; c < classes_per_task; ++c) {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            const std::size_t i = pick(rng);
            chosen.push_back(pool[i]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
        }
        plan.tasks.push_back(std::move(chosen));
    }
    return plan;
}

// Synthetic primitives -------------------------------------------------------

const std::vector<std::string>& synthetic_class_names() {
    static const std::vector<std::string> names{"sphere", "cube", "cylinder", "cone",
                                                "torus",  "plane", "helix",   "cross"};
    return names;
}

namespace {

constexpr double kPi = std::numbers::pi;

Vec3 sample_primitive(const std::string& shape, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto disk = [&](double z) -> Vec3 {
        const double r = std::sqrt(unit(rng)), a = 2.0 * kPi * unit(rng);
        return {r * std::cos(a), r * std::sin(a), z};
    };
    if (shape == "sphere") {
        Vec3 v{};
        double norm = 0.0;
        while (!(norm > 1e-12)) {
            v = {gauss(rng), gauss(rng), gauss(rng)};
            norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        }
        return {v[0] / norm, v[1] / norm, v[2] / norm};
    }
    if (shape == "cube") {
        const int face = std::uniform_int_distribution<int>(0, 5)(rng);
        Vec3 v{sym(rng), sym(rng), sym(rng)};
        v[static_cast<std::size_t>(face / 2)] = face % 2 ? 1.0 : -1.0;
        return v;
    }
    if (shape == "cylinder") {
        // lateral area 4*pi, caps 2*pi
        if (unit(rng) < 2.0 / 3.0) {
            const double a = 2.0 * kPi * unit(rng);
            return {std::cos(a), std::sin(a), sym(rng)};
        }
        return disk(unit(rng) < 0.5 ? -1.0 : 1.0);
    }
    if (shape == "cone") {
        // apex (0,0,1), base radius 1 at z=-1; lateral area pi*sqrt(5), base pi
        const double lateral = std::sqrt(5.0) / (1.0 + std::sqrt(5.0));
        if (unit(rng) < lateral) {
            const double t = std::sqrt(unit(rng)), a = 2.0 * kPi * unit(rng);
            return {t * std::cos(a), t * std::sin(a), 1.0 - 2.0 * t};
        }
        return disk(-1.0);
    }
    if (shape == "torus") {
        constexpr double major = 1.0, minor = 0.4;
        for (;;) {
            const double u = 2.0 * kPi * unit(rng), v = 2.0 * kPi * unit(rng);
            if (unit(rng) * (major + minor) <= major + minor * std::cos(v)) {
                const double ring = major + minor * std::cos(v);
                return {ring * std::cos(u), ring * std::sin(u), minor * std::sin(v)};
            }
        }
    }
    if (shape == "plane") return {sym(rng), sym(rng), 0.0};
    if (shape == "helix") {
        const double t = unit(rng), a = 2.0 * kPi * 3.0 * t;
        return {std::cos(a), std::sin(a), 2.0 * t - 1.0};
    }
    if (shape == "cross") {
        Vec3 v{0.0, 0.0, 0.0};
        v[std::uniform_int_distribution<std::size_t>(0, 2)(rng)] = sym(rng);
        return v;
    }
    throw ConfigError("unknown synthetic class '" + shape + "'");
}

std::array<double, 9> random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    double q[4];
    double norm = 0.0;
    while (!(norm > 1e-12)) {
        for (auto& c : q) c = gauss(rng);
        norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    }
    const double w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
    return {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
            2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
            2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
}

}  // namespace

TaskDataset gen_synthetic(const std::vector<std::string>& classes, std::size_t per_class, std::size_t n_pts,
                          double noise_sigma, std::uint64_t seed) {
    const auto& known = synthetic_class_names();
    for (const auto& c : classes) {
        if (std::find(known.begin(), known.end(), c) == known.end()) {
            throw ConfigError("unknown synthetic class '" + c + "'");
        }
    }
    if (classes.size() < 2) throw ConfigError("synthetic task needs at least 2 classes");
    if (per_class < 2) throw ConfigError("per_class must be at least 2 to fill both splits");
    if (n_pts == 0) throw ConfigError("synthetic clouds need at least one point");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");

    const std::size_t n_train = std::clamp<std::size_t>(per_class * 4 / 5, 1, per_class - 1);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 1.0);
    TaskDataset ds;
    ds.class_names = classes;
    for (std::size_t label = 0; label < classes.size(); ++label) {
        for (std::size_t obj = 0; obj < per_class; ++obj) {
            const auto rot = random_rotation(rng);
            Tensor pts({n_pts, 3});
            for (std::size_t i = 0; i < n_pts; ++i) {
                const Vec3 p = sample_primitive(classes[label], rng);
                for (std::size_t r = 0; r < 3; ++r) {
                    double v = rot[r * 3] * p[0] + rot[r * 3 + 1] * p[1] + rot[r * 3 + 2] * p[2];
                    if (noise_sigma > 0.0) v += noise_sigma * jitter(rng);
                    pts[i * 3 + r] = v;
                }
            }
            char name[64];
            std::snprintf(name, sizeof name, "_%04zu", obj);
            Sample s{{std::move(pts), classes[label] + name}, label};
            (obj < n_train ? ds.train : ds.test).push_back(std::move(s));
        }
    }
    return ds;
}

// Directory datasets ---------------------------------------------------------

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

PointCloud load_cloud(const std::filesystem::path& path, std::size_t n_pts, std::uint64_t seed) {
    PointCloud cloud;
    const std::string text = read_file(path);
    try {
        if (path.extension() == ".off") {
            cloud = sample_mesh(parse_off(text), 2 * n_pts, seed);
        } else {
            cloud = parse_pts(text);
        }
    } catch (const ParseError& e) {
        throw DataError(path.string() + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    if (cloud.num_points() < n_pts) {
        throw DataError(path.string() + ": has " + std::to_string(cloud.num_points()) + " points, need " +
                        std::to_string(n_pts));
    }
    if (cloud.num_points() > n_pts) cloud = select_points(cloud, farthest_point_sampling(cloud, n_pts));
    cloud = normalize_unit_sphere(cloud);
    cloud.source = path.string();
    return cloud;
}

std::vector<std::filesystem::path> cloud_files(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(dir)) return files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto ext = entry.path().extension();
        if (entry.is_regular_file() && (ext == ".off" || ext == ".pts")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

std::vector<std::string> list_directory_classes(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
    std::vector<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_directory()) names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) throw DataError("dataset root " + root.string() + " has no class directories");
    return names;
}

TaskDataset load_directory_task(const std::filesystem::path& root, const std::vector<std::string>& classes,
                                std::size_t n_pts, std::uint64_t seed) {
    TaskDataset ds;
    ds.class_names = classes;
    std::uint64_t file_seed = seed;
    for (std::size_t label = 0; label < classes.size(); ++label) {
        for (const char* split : {"train", "test"}) {
            auto& out = std::string_view(split) == "train" ? ds.train : ds.test;
            for (const auto& file : cloud_files(root / classes[label] / split)) {
                out.push_back({load_cloud(file, n_pts, file_seed++), label});
            }
        }
    }
    ds.validate();
    return ds;
}

void write_dataset_directory(const TaskDataset& dataset, const std::filesystem::path& root) {
    for (const char* split : {"train", "test"}) {
        const auto& samples = std::string_view(split) == "train" ? dataset.train : dataset.test;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& s = samples[i];
            const auto dir = root / dataset.class_names.at(s.label) / split;
            std::filesystem::create_directories(dir);
            const std::string stem = s.cloud.source.empty() ? std::to_string(i) : s.cloud.source;
            std::ofstream out(dir / (stem + ".pts"), std::ios::binary);
            if (!out) throw DataError("cannot write " + (dir / (stem + ".pts")).string());
            out << serialize_pts(s.cloud);
        }
    }
}

}  // namespace l3doc::data
