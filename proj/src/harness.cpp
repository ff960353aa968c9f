#include "datum/harness/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "datum/core/hash.hpp"
#include "datum/core/png_io.hpp"
#include "datum/diffusion/diffusion.hpp"

namespace datum {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& scope,
                std::initializer_list<const char*> allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* a : allowed)
            if (it.key() == a) known = true;
        if (!known) throw Error("unknown config key: " + scope + it.key());
    }
}

template <class T>
void pick(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json iou_to_json(const IouReport& r) {
    json per = json::array();
    for (double v : r.per_class)
        per.push_back(std::isnan(v) ? json() : json(v));
    return {{"per_class", per},
            {"miou", r.miou},
            {"subset_miou", r.subset_miou},
            {"subset", r.subset}};
}

IouReport iou_from_json(const json& j) {
    IouReport r;
    for (const json& v : j.at("per_class"))
        r.per_class.push_back(v.is_null() ? std::nan("") : v.get<double>());
    r.miou = j.at("miou").get<double>();
    r.subset_miou = j.at("subset_miou").get<double>();
    r.subset = j.at("subset").get<std::vector<int>>();
    return r;
}

// Lazily ensured, content-keyed pipeline stages. Each stage lives in
// <cache>/<name>-<key12> and is considered done once done.json exists;
// directories without the marker are wiped and rebuilt.
class Stages {
public:
    explicit Stages(const PipelineConfig& config)
        : cfg(config), cj(to_json(config)), cache(cache_root(config)) {
        fs::create_directories(cache);
    }

    const PipelineConfig& cfg;
    json cj;
    fs::path cache;
    std::map<std::string, double> wall;
    std::map<std::string, std::string> arts;

    std::string k_data() { return stage_key(json{{"data", cj.at("data")}}, {}); }

    fs::path data() {
        return ensure("data", k_data(), [&](const fs::path& dir) {
            make_benchmark(dir.string(), cfg.data_seed, cfg.sizes);
        });
    }

    DatasetManifest man(const std::string& split) {
        return load_manifest((data() / split).string());
    }

    std::string k_pretrain() {
        return stage_key(json{{"pretrain", cj.at("pretrain")}}, {k_data()});
    }

    fs::path pretrain_dir() {
        return ensure("pretrain", k_pretrain(), [&](const fs::path& dir) {
            TrainSet corpus = load_captioned(man("prior"), Vocabulary::standard());
            Rng rng(cfg.pretrain_seed);
            base_.init(rng, Vocabulary::standard());
            pretrain(base_, corpus, default_schedule(), cfg.pretrain, cfg.pretrain_seed);
            save_model(dir.string(), base_, {});
            base_loaded_ = true;
        });
    }

    DiffusionModel<float>& base_model() {
        fs::path dir = pretrain_dir();
        if (!base_loaded_) {
            load_model(dir.string(), base_);
            base_loaded_ = true;
        }
        return base_;
    }

    fs::path feature_dir() {
        std::string key = stage_key(json{{"feature", cj.at("feature")}}, {k_data()});
        return ensure("feature", key, [&](const fs::path& dir) {
            FeatureReport frep;
            FeatureNet net = train_feature_net(man("prior"), cfg.feature, cfg.feature_seed, &frep);
            save_feature_net(dir.string(), net, frep);
        });
    }

    std::vector<std::size_t> datum_indices() {
        int pool = cfg.sizes.datum_pool;
        int shots = cfg.personalize.shots;
        if (shots > pool) throw Error("more shots than datum pool images");
        std::vector<std::size_t> order(static_cast<std::size_t>(pool));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(cfg.seed, "datum"));
        for (int i = 0; i < shots; ++i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(rng.uniform_int(i, pool - 1))]);
        order.resize(static_cast<std::size_t>(shots));
        std::sort(order.begin(), order.end());
        return order;
    }

    std::string k_personalize() {
        json node = cj.at("personalize");
        node["seed"] = derive_seed(cfg.seed, "personalize");
        node["indices"] = datum_indices();
        return stage_key(json{{"personalize", node}}, {k_data(), k_pretrain()});
    }

    fs::path personalize_dir() {
        return ensure("personalize", k_personalize(), [&](const fs::path& dir) {
            DiffusionModel<float>& base = base_model();
            TargetDatum datum = load_datum(man("datum_pool"), datum_indices());
            TrainSet prior;
            const TrainSet* pp = nullptr;
            if (cfg.personalize.prior_preservation) {
                prior = load_captioned(man("prior"), base.vocab);
                pp = &prior;
            }
            DiffusionModel<float> tuned =
                finetune(base, default_schedule(), datum, pp, cfg.personalize,
                         derive_seed(cfg.seed, "personalize"));
            save_personalized(dir.string(), tuned, cfg.personalize);
        });
    }

    GenerationConfig gen_config(bool personalized) {
        GenerationConfig g = cfg.generate;
        g.seed = derive_seed(cfg.seed, personalized ? "generate" : "generate_unpersonalized");
        g.force_unpersonalized = !personalized;
        return g;
    }

    std::string k_generate(bool personalized) {
        json node = cj.at("generate");
        node["seed"] = gen_config(personalized).seed;
        node["arm"] = personalized ? "personalized" : "base";
        return stage_key(json{{"generate", node}},
                         personalized ? std::vector<std::string>{k_personalize()}
                                      : std::vector<std::string>{k_pretrain()});
    }

    fs::path generate_dir(bool personalized) {
        GenerationConfig g = gen_config(personalized);
        std::string name = personalized ? "generate" : "generate_unpersonalized";
        fs::path model_dir = personalized ? personalize_dir() : pretrain_dir();
        return ensure(name, k_generate(personalized), [&](const fs::path& dir) {
            generate_from_checkpoint(model_dir.string(), g, dir.string());
        });
    }

    fs::path source_only_dir() {
        json node = {{"adapt", cj.at("adapt")},
                     {"mode", "source_only"},
                     {"seed", derive_seed(cfg.seed, "source_only")}};
        return ensure("source_only", stage_key(node, {k_data()}), [&](const fs::path& dir) {
            SegNet<float> net = train_source_only(man("source_train"), cfg.adapt,
                                                  derive_seed(cfg.seed, "source_only"));
            save_seg(dir.string(), net, {{"mode", "source_only"}});
        });
    }

    fs::path adapt_dir() {
        fs::path gen = generate_dir(true);
        json node = {{"adapt", cj.at("adapt")}, {"seed", derive_seed(cfg.seed, "adapt")}};
        return ensure("adapt", stage_key(node, {k_data(), k_generate(true)}),
                      [&](const fs::path& dir) {
                          SegNet<float> net =
                              adapt(man("source_train"), load_manifest(gen.string()), cfg.adapt,
                                    derive_seed(cfg.seed, "adapt"));
                          save_seg(dir.string(), net, {{"mode", "adapted"}});
                      });
    }

    // Adaptation against a subset of real target images treated as
    // unlabeled, the upper-bound curve of the cardinality ablation.
    fs::path real_adapt_dir(int size) {
        if (size < 1) throw Error("real target subset must not be empty");
        if (size > cfg.sizes.target_train) throw Error("real target subset larger than the split");
        json node = {{"adapt", cj.at("adapt")},
                     {"mode", "real"},
                     {"size", size},
                     {"seed", derive_seed(cfg.seed, "adapt")}};
        return ensure("adapt_real_" + std::to_string(size), stage_key(node, {k_data()}),
                      [&](const fs::path& dir) {
                          DatasetManifest sub = man("target_train");
                          Rng rng(derive_seed(cfg.seed, "real_subset"));
                          for (std::size_t i = 0; i + 1 < sub.items.size(); ++i) {
                              int j = rng.uniform_int(static_cast<int>(i),
                                                      static_cast<int>(sub.items.size()) - 1);
                              std::swap(sub.items[i], sub.items[static_cast<std::size_t>(j)]);
                          }
                          sub.items.resize(static_cast<std::size_t>(size));
                          sub.labeled = false;
                          SegNet<float> net = adapt(man("source_train"), sub, cfg.adapt,
                                                    derive_seed(cfg.seed, "adapt"));
                          save_seg(dir.string(), net, {{"mode", "real"}, {"size", size}});
                      });
    }

private:
    fs::path ensure(const std::string& name, const std::string& key,
                    const std::function<void(const fs::path&)>& build) {
        if (auto it = done_.find(name); it != done_.end()) return it->second;
        fs::path dir = cache / (name + "-" + key.substr(0, 12));
        bool hit = cfg.reuse_cache && fs::exists(dir / "done.json");
        if (hit) {
            wall[name] = 0;
        } else {
            fs::remove_all(dir);
            fs::create_directories(dir);
            auto t0 = std::chrono::steady_clock::now();
            try {
                build(dir);
            } catch (const std::exception& e) {
                throw Error("stage " + name + " (" + dir.string() + "): " + e.what());
            }
            std::ofstream marker(dir / "done.json");
            marker << json{{"stage", name}, {"key", key}}.dump(2) << "\n";
            wall[name] = seconds_since(t0);
        }
        arts[name] = dir.string();
        done_[name] = dir;
        return dir;
    }

    std::map<std::string, fs::path> done_;
    DiffusionModel<float> base_;
    bool base_loaded_ = false;
};

std::string format_num(double v) {
    std::ostringstream out;
    out << std::setprecision(10) << v;
    return out.str();
}

const std::array<std::array<std::uint8_t, 3>, kNumClasses> kPalette = {{
    {135, 206, 235},  // sky
    {90, 90, 90},     // road
    {160, 82, 45},    // building
    {220, 20, 60},    // car
    {255, 215, 0},    // pedestrian
    {50, 205, 50},    // sign
}};

void paint_panel(std::vector<std::uint8_t>& canvas, int canvas_w, int x0, int y0,
                 const Eigen::Matrix3Xf& pixels, int h, int w) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            Eigen::Index p = static_cast<Eigen::Index>(y) * w + x;
            std::size_t at = (static_cast<std::size_t>(y0 + y) * canvas_w + (x0 + x)) * 3;
            for (int c = 0; c < 3; ++c)
                canvas[at + static_cast<std::size_t>(c)] = quantize_channel(pixels(c, p));
        }
}

void paint_mask(std::vector<std::uint8_t>& canvas, int canvas_w, int x0, int y0,
                const MaskArray& mask, int h, int w) {
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::uint8_t cls = mask[static_cast<Eigen::Index>(y) * w + x];
            std::size_t at = (static_cast<std::size_t>(y0 + y) * canvas_w + (x0 + x)) * 3;
            for (int c = 0; c < 3; ++c)
                canvas[at + static_cast<std::size_t>(c)] = kPalette[cls][static_cast<std::size_t>(c)];
        }
}

// Rows of image | prediction | ground truth with 4 px white gutters.
void overlay_grid(SegNet<float>& net, const DatasetManifest& manifest, int rows,
                  const std::string& path) {
    DatasetReader reader(manifest);
    rows = std::min<int>(rows, static_cast<int>(manifest.items.size()));
    if (rows < 1) throw Error("overlay grid needs at least one image");
    LabeledImage first = reader.load_labeled(0);
    const int s = first.height, g = 4;
    const int width = 3 * s + 2 * g;
    const int height = rows * s + (rows - 1) * g;
    std::vector<std::uint8_t> canvas(static_cast<std::size_t>(width) * height * 3, 255);
    for (int r = 0; r < rows; ++r) {
        LabeledImage img = reader.load_labeled(static_cast<std::size_t>(r));
        MaskArray pred = predict_labels(net, img);
        int y0 = r * (s + g);
        paint_panel(canvas, width, 0, y0, img.pixels, img.height, img.width);
        paint_mask(canvas, width, s + g, y0, pred, img.height, img.width);
        paint_mask(canvas, width, 2 * (s + g), y0, img.mask, img.height, img.width);
    }
    write_png_rgb8(path, width, height, canvas);
}

}  // namespace

json to_json(const PipelineConfig& c) {
    return {
        {"seed", c.seed},
        {"out_root", c.out_root},
        {"reuse_cache", c.reuse_cache},
        {"with_fid", c.with_fid},
        {"data",
         {{"source_train", c.sizes.source_train},
          {"source_test", c.sizes.source_test},
          {"target_train", c.sizes.target_train},
          {"target_test", c.sizes.target_test},
          {"datum_pool", c.sizes.datum_pool},
          {"prior", c.sizes.prior},
          {"seed", c.data_seed}}},
        {"pretrain",
         {{"steps", c.pretrain.steps},
          {"batch", c.pretrain.batch},
          {"lr", c.pretrain.lr},
          {"pad_drop", c.pretrain.pad_drop},
          {"log_every", c.pretrain.log_every},
          {"seed", c.pretrain_seed}}},
        {"feature",
         {{"steps", c.feature.steps},
          {"batch", c.feature.batch},
          {"lr", c.feature.lr},
          {"noise_sd", c.feature.noise_sd},
          {"holdout_every", c.feature.holdout_every},
          {"enforce_floor", c.feature.enforce_floor},
          {"floor", c.feature.floor},
          {"seed", c.feature_seed}}},
        {"personalize",
         {{"iterations", c.personalize.iterations},
          {"crop_size", c.personalize.crop_size},
          {"crops_per_step", c.personalize.crops_per_step},
          {"lr", c.personalize.lr},
          {"prior_preservation", c.personalize.prior_preservation},
          {"prior_weight", c.personalize.prior_weight},
          {"train_token_only", c.personalize.train_token_only},
          {"shots", c.personalize.shots}}},
        {"generate",
         {{"n", c.generate.n},
          {"class_list", c.generate.class_list},
          {"mode", to_string(c.generate.prompt_mode)},
          {"hw", c.generate.hw}}},
        {"adapt",
         {{"iterations", c.adapt.iterations},
          {"batch_source", c.adapt.batch_source},
          {"batch_target", c.adapt.batch_target},
          {"lr", c.adapt.lr},
          {"warmup", c.adapt.warmup},
          {"ema_alpha", c.adapt.ema_alpha},
          {"conf_threshold", c.adapt.conf_threshold},
          {"classmix", c.adapt.classmix},
          {"log_every", c.adapt.log_every}}},
    };
}

PipelineConfig pipeline_from_json(const json& j) {
    PipelineConfig c;
    check_keys(j, "", {"seed", "out_root", "reuse_cache", "with_fid", "data", "pretrain",
                       "feature", "personalize", "generate", "adapt"});
    pick(j, "seed", c.seed);
    pick(j, "out_root", c.out_root);
    pick(j, "reuse_cache", c.reuse_cache);
    pick(j, "with_fid", c.with_fid);
    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, "data.", {"source_train", "source_test", "target_train", "target_test",
                                "datum_pool", "prior", "seed"});
        pick(d, "source_train", c.sizes.source_train);
        pick(d, "source_test", c.sizes.source_test);
        pick(d, "target_train", c.sizes.target_train);
        pick(d, "target_test", c.sizes.target_test);
        pick(d, "datum_pool", c.sizes.datum_pool);
        pick(d, "prior", c.sizes.prior);
        pick(d, "seed", c.data_seed);
    }
    if (j.contains("pretrain")) {
        const json& d = j.at("pretrain");
        check_keys(d, "pretrain.", {"steps", "batch", "lr", "pad_drop", "log_every", "seed"});
        pick(d, "steps", c.pretrain.steps);
        pick(d, "batch", c.pretrain.batch);
        pick(d, "lr", c.pretrain.lr);
        pick(d, "pad_drop", c.pretrain.pad_drop);
        pick(d, "log_every", c.pretrain.log_every);
        pick(d, "seed", c.pretrain_seed);
    }
    if (j.contains("feature")) {
        const json& d = j.at("feature");
        check_keys(d, "feature.", {"steps", "batch", "lr", "noise_sd", "holdout_every",
                                   "enforce_floor", "floor", "seed"});
        pick(d, "steps", c.feature.steps);
        pick(d, "batch", c.feature.batch);
        pick(d, "lr", c.feature.lr);
        pick(d, "noise_sd", c.feature.noise_sd);
        pick(d, "holdout_every", c.feature.holdout_every);
        pick(d, "enforce_floor", c.feature.enforce_floor);
        pick(d, "floor", c.feature.floor);
        pick(d, "seed", c.feature_seed);
    }
    if (j.contains("personalize")) {
        const json& d = j.at("personalize");
        check_keys(d, "personalize.",
                   {"iterations", "crop_size", "crops_per_step", "lr", "prior_preservation",
                    "prior_weight", "train_token_only", "shots"});
        pick(d, "iterations", c.personalize.iterations);
        pick(d, "crop_size", c.personalize.crop_size);
        pick(d, "crops_per_step", c.personalize.crops_per_step);
        pick(d, "lr", c.personalize.lr);
        pick(d, "prior_preservation", c.personalize.prior_preservation);
        pick(d, "prior_weight", c.personalize.prior_weight);
        pick(d, "train_token_only", c.personalize.train_token_only);
        pick(d, "shots", c.personalize.shots);
    }
    if (j.contains("generate")) {
        const json& d = j.at("generate");
        check_keys(d, "generate.", {"n", "class_list", "mode", "hw"});
        pick(d, "n", c.generate.n);
        pick(d, "class_list", c.generate.class_list);
        if (d.contains("mode"))
            c.generate.prompt_mode = prompt_mode_from_string(d.at("mode").get<std::string>());
        pick(d, "hw", c.generate.hw);
    }
    if (j.contains("adapt")) {
        const json& d = j.at("adapt");
        check_keys(d, "adapt.", {"iterations", "batch_source", "batch_target", "lr", "warmup",
                                 "ema_alpha", "conf_threshold", "classmix", "log_every"});
        pick(d, "iterations", c.adapt.iterations);
        pick(d, "batch_source", c.adapt.batch_source);
        pick(d, "batch_target", c.adapt.batch_target);
        pick(d, "lr", c.adapt.lr);
        pick(d, "warmup", c.adapt.warmup);
        pick(d, "ema_alpha", c.adapt.ema_alpha);
        pick(d, "conf_threshold", c.adapt.conf_threshold);
        pick(d, "classmix", c.adapt.classmix);
        pick(d, "log_every", c.adapt.log_every);
    }
    return c;
}

std::string pipeline_hash(const PipelineConfig& config) { return config_hash(to_json(config)); }

std::string cache_root(const PipelineConfig& config) {
    if (const char* env = std::getenv("DATUM_CACHE"); env && *env) return env;
    return (fs::path(config.out_root) / "cache").string();
}

json report_to_json(const RunReport& r) {
    return {{"config_hash", r.config_hash},
            {"seed", r.seed},
            {"artifacts", r.artifacts},
            {"source_only", iou_to_json(r.source_only)},
            {"adapted", iou_to_json(r.adapted)},
            {"fid_personalized", r.fid_personalized},
            {"fid_unpersonalized", r.fid_unpersonalized},
            {"diversity", r.diversity},
            {"wall_clock", r.wall_clock}};
}

RunReport report_from_json(const json& j) {
    RunReport r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    r.source_only = iou_from_json(j.at("source_only"));
    r.adapted = iou_from_json(j.at("adapted"));
    r.fid_personalized = j.at("fid_personalized").get<double>();
    r.fid_unpersonalized = j.at("fid_unpersonalized").get<double>();
    r.diversity = j.at("diversity").get<double>();
    r.wall_clock = j.at("wall_clock").get<std::map<std::string, double>>();
    return r;
}

void save_report(const RunReport& report, const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << report_to_json(report).dump(2) << "\n";
}

RunReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    json j;
    in >> j;
    return report_from_json(j);
}

RunReport run(const PipelineConfig& config) {
    RunReport rep;
    rep.config_hash = pipeline_hash(config);
    rep.seed = config.seed;
    fs::path run_dir = fs::path(config.out_root) /
                       ("run-" + rep.config_hash.substr(0, 12) + "-s" + std::to_string(config.seed));
    fs::path report_path = run_dir / "report.json";
    if (config.reuse_cache && fs::exists(report_path)) {
        RunReport cached = load_report(report_path.string());
        if (cached.config_hash == rep.config_hash) return cached;
    }

    Stages st(config);
    st.data();
    st.pretrain_dir();
    st.feature_dir();
    st.personalize_dir();
    fs::path gen = st.generate_dir(true);
    fs::path genu;
    if (config.with_fid) genu = st.generate_dir(false);
    fs::path src_dir = st.source_only_dir();
    fs::path adapted_dir = st.adapt_dir();

    auto t0 = std::chrono::steady_clock::now();
    DatasetManifest target_test = st.man("target_test");
    SegNet<float> source_net = load_seg(src_dir.string());
    SegNet<float> adapted_net = load_seg(adapted_dir.string());
    rep.source_only = evaluate(source_net, target_test);
    rep.adapted = evaluate(adapted_net, target_test);

    DatasetManifest generated = load_manifest(gen.string());
    if (config.with_fid) {
        FeatureNet fnet = load_feature_net(st.feature_dir().string());
        DatasetManifest reference = st.man("target_train");
        rep.fid_personalized = fid_between(fnet, generated, reference);
        rep.fid_unpersonalized = fid_between(fnet, load_manifest(genu.string()), reference);
        DatasetReader reader(generated);
        std::vector<Eigen::Matrix3Xf> pixels;
        pixels.reserve(generated.items.size());
        for (std::size_t i = 0; i < generated.items.size(); ++i)
            pixels.push_back(reader.load_image(i).pixels);
        rep.diversity = diversity(pixels);
    }
    st.wall["evaluate"] = seconds_since(t0);

    rep.artifacts = st.arts;
    rep.wall_clock = st.wall;
    rep.artifacts["report"] = run_dir.string();
    save_report(rep, report_path.string());
    return rep;
}

void write_csv(const AblationTable& table, const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    bool labeled = !table.labels.empty();
    if (labeled && table.labels.size() != table.rows.size())
        throw Error("label count does not match row count");
    if (labeled) out << "label,";
    for (std::size_t c = 0; c < table.columns.size(); ++c)
        out << table.columns[c] << (c + 1 < table.columns.size() ? "," : "\n");
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        if (table.rows[r].size() != table.columns.size())
            throw Error("row width does not match column count");
        if (labeled) out << table.labels[r] << ",";
        for (std::size_t c = 0; c < table.rows[r].size(); ++c)
            out << format_num(table.rows[r][c]) << (c + 1 < table.rows[r].size() ? "," : "\n");
    }
}

void write_line_plot(const AblationTable& table, const std::string& path) {
    if (table.columns.size() < 2) throw Error("plot needs an x column and one series");
    if (table.rows.empty()) throw Error("plot needs at least one row");
    const int w = 640, h = 400, ml = 70, mr = 120, mt = 40, mb = 50;
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

    double xmin = table.rows[0][0], xmax = xmin;
    double ymin = table.rows[0][1], ymax = ymin;
    for (const auto& row : table.rows) {
        xmin = std::min(xmin, row[0]);
        xmax = std::max(xmax, row[0]);
        for (std::size_t c = 1; c < row.size(); ++c) {
            ymin = std::min(ymin, row[c]);
            ymax = std::max(ymax, row[c]);
        }
    }
    if (xmax == xmin) xmax = xmin + 1;
    double pad = (ymax - ymin) * 0.08 + 1e-9;
    ymin -= pad;
    ymax += pad;
    auto sx = [&](double v) { return ml + (v - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto sy = [&](double v) { return h - mb - (v - ymin) / (ymax - ymin) * (h - mt - mb); };

    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << ml << "\" y=\"" << mt - 16 << "\" font-size=\"14\">" << table.name
        << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";
    auto tick = [&](double v, bool on_x) {
        std::ostringstream s;
        s << std::setprecision(4) << v;
        if (on_x)
            out << "<text x=\"" << sx(v) - 8 << "\" y=\"" << h - mb + 18 << "\">" << s.str()
                << "</text>\n";
        else
            out << "<text x=\"" << 6 << "\" y=\"" << sy(v) + 4 << "\">" << s.str() << "</text>\n";
    };
    tick(xmin, true);
    tick(xmax, true);
    tick(ymin + pad, false);
    tick(ymax - pad, false);
    out << "<text x=\"" << (w - mr + ml) / 2 << "\" y=\"" << h - 12 << "\">" << table.columns[0]
        << "</text>\n";

    for (std::size_t c = 1; c < table.columns.size(); ++c) {
        const char* color = colors[(c - 1) % 5];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& row : table.rows) out << sx(row[0]) << "," << sy(row[c]) << " ";
        out << "\"/>\n";
        for (const auto& row : table.rows)
            out << "<circle cx=\"" << sx(row[0]) << "\" cy=\"" << sy(row[c])
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        out << "<text x=\"" << w - mr + 10 << "\" y=\"" << mt + 16 * static_cast<int>(c)
            << "\" fill=\"" << color << "\">" << table.columns[c] << "</text>\n";
    }
    out << "</svg>\n";
}

namespace {

void emit_table(const AblationTable& table, const std::string& out_dir) {
    write_csv(table, (fs::path(out_dir) / (table.name + ".csv")).string());
    write_line_plot(table, (fs::path(out_dir) / (table.name + ".svg")).string());
}

double mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

AblationTable ablate_shots(const PipelineConfig& base, const std::vector<int>& shots,
                           const std::vector<int>& iteration_grid,
                           const std::vector<std::uint64_t>& seeds, const std::string& out_dir) {
    if (shots.empty() || iteration_grid.empty() || seeds.empty())
        throw Error("shots ablation needs shots, iterations and seeds");
    for (int s : shots)
        if (s < 1) throw Error("shots must be at least 1");
    AblationTable table;
    table.name = "shots";
    table.columns = {"shots", "iterations", "miou", "fid"};
    for (int s : shots)
        for (int it : iteration_grid) {
            std::vector<double> mious, fids;
            for (std::uint64_t seed : seeds) {
                PipelineConfig cfg = base;
                cfg.personalize.shots = s;
                cfg.personalize.iterations = it;
                cfg.seed = seed;
                RunReport rep = run(cfg);
                mious.push_back(rep.adapted.miou);
                fids.push_back(rep.fid_personalized);
            }
            table.rows.push_back(
                {static_cast<double>(s), static_cast<double>(it), mean(mious), mean(fids)});
        }
    emit_table(table, out_dir);
    return table;
}

AblationTable ablate_prompts(const PipelineConfig& base, const std::vector<PromptMode>& variants,
                             const std::vector<std::uint64_t>& seeds, const std::string& out_dir) {
    if (variants.empty() || seeds.empty()) throw Error("prompt ablation needs variants and seeds");
    AblationTable table;
    table.name = "prompts";
    table.columns = {"variant", "miou"};
    for (std::size_t v = 0; v < variants.size(); ++v) {
        std::vector<double> mious;
        for (std::uint64_t seed : seeds) {
            PipelineConfig cfg = base;
            cfg.generate.prompt_mode = variants[v];
            cfg.seed = seed;
            mious.push_back(run(cfg).adapted.miou);
        }
        table.labels.push_back(to_string(variants[v]));
        table.rows.push_back({static_cast<double>(v), mean(mious)});
    }
    emit_table(table, out_dir);
    return table;
}

AblationTable ablate_cardinality(const PipelineConfig& base, const std::vector<int>& sizes,
                                 const std::vector<std::uint64_t>& seeds,
                                 const std::string& out_dir) {
    if (sizes.empty() || seeds.empty()) throw Error("cardinality ablation needs sizes and seeds");
    for (int s : sizes) {
        if (s < 1) throw Error("dataset size must be at least 1");
        if (s > base.sizes.target_train)
            throw Error("real target subset larger than the split");
    }
    AblationTable table;
    table.name = "cardinality";
    table.columns = {"size", "generated_miou", "real_miou"};
    for (int size : sizes) {
        std::vector<double> gen_mious, real_mious;
        for (std::uint64_t seed : seeds) {
            PipelineConfig cfg = base;
            cfg.generate.n = size;
            cfg.seed = seed;
            gen_mious.push_back(run(cfg).adapted.miou);

            Stages st(cfg);
            fs::path dir = st.real_adapt_dir(size);
            SegNet<float> net = load_seg(dir.string());
            real_mious.push_back(evaluate(net, st.man("target_test")).miou);
        }
        table.rows.push_back({static_cast<double>(size), mean(gen_mious), mean(real_mious)});
    }
    emit_table(table, out_dir);
    return table;
}

void export_report(const RunReport& report, const std::vector<AblationTable>& ablations,
                   const std::string& out_dir) {
    fs::create_directories(out_dir);
    save_report(report, (fs::path(out_dir) / "report.json").string());
    for (const AblationTable& t : ablations) emit_table(t, out_dir);

    auto test_it = report.artifacts.find("data");
    if (test_it == report.artifacts.end()) return;
    fs::path target_test = fs::path(test_it->second) / "target_test";
    if (!fs::exists(target_test / "manifest.json")) return;
    DatasetManifest manifest = load_manifest(target_test.string());
    for (const char* stage : {"source_only", "adapt"}) {
        auto it = report.artifacts.find(stage);
        if (it == report.artifacts.end() || !fs::exists(fs::path(it->second) / "weights.bin"))
            continue;
        SegNet<float> net = load_seg(it->second);
        overlay_grid(net, manifest, 8,
                     (fs::path(out_dir) / (std::string("overlay_") + stage + ".png")).string());
    }
}

double detection_rate(FeatureNet& net, const DatasetManifest& generated,
                      const std::vector<std::string>& class_list) {
    if (generated.items.empty()) throw Error("empty manifest");
    if (class_list.empty()) throw Error("empty class list");
    DatasetReader reader(generated);
    int hits = 0;
    for (std::size_t i = 0; i < generated.items.size(); ++i) {
        std::string prompt = provenance_value(generated.items[i].provenance, "prompt");
        std::string wanted;
        std::istringstream words(prompt);
        for (std::string w; words >> w;)
            if (std::find(class_list.begin(), class_list.end(), w) != class_list.end()) wanted = w;
        if (wanted.empty()) wanted = class_list[i % class_list.size()];
        int want_id = class_id(wanted) - kFirstThing + 1;
        LabeledImage img = reader.load_image(i);
        if (dominant_prediction(net, img.pixels, img.height, img.width) == want_id) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(generated.items.size());
}

}  // namespace datum
