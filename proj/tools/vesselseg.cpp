// vesselseg: command-line front end.
//
//   vesselseg phantom  --out-dir D [--n 26] [--preset default|toy]
//   vesselseg split    --cohort D/phantoms.json --counts 10,3,13 --out-dir S
//   vesselseg augment  --manifest S/split.json --out-dir A
//   vesselseg train    --manifest A/split_augmented.json --out-dir M [--role cta|nc] [--input full|lowres|region:arch|region:descending]
//   vesselseg predict  --model M/model.ckpt --input scan.nii.gz --output mask.nii.gz
//   vesselseg pipeline --bundle bundle.json --input scan.nii.gz --output mask.nii.gz [--debug-dir X]
//   vesselseg evaluate --out-dir E [--pairs pairs.json] [--manifest split.json] [--observers obs.json]
//                      [--history name=history.csv ...]
//   vesselseg compare  --out-dir C
//
// Common flags: --seed, --config (key=value file), --out-dir. Flags override config keys.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vesselseg/vesselseg.hpp"

namespace fs = std::filesystem;
using namespace vesselseg;
using nlohmann::json;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string config_path;
    std::string out_dir;
    io::Config config;
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write '" + path.string() + "'");
    os << text;
}

json read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open '" + path + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("invalid JSON in '" + path + "': " + e.what());
    }
}

/// Manifest paths are stored relative to the manifest's directory.
std::string rel_to(const fs::path& target, const fs::path& base_dir) {
    return fs::relative(fs::absolute(target), fs::absolute(base_dir)).generic_string();
}

std::string resolve(const std::string& p, const fs::path& base_dir) {
    const fs::path fp(p);
    return (fp.is_absolute() ? fp : base_dir / fp).lexically_normal().string();
}

std::map<std::string, std::string> resolve_all(const std::map<std::string, std::string>& scans, const fs::path& from,
                                               const fs::path& to) {
    std::map<std::string, std::string> out;
    for (const auto& [role, p] : scans) out[role] = rel_to(resolve(p, from), to);
    return out;
}

void require_out_dir(const Common& c) {
    if (c.out_dir.empty()) throw InvalidArgument("--out-dir is required");
    fs::create_directories(c.out_dir);
}

// ---------------------------------------------------------------- phantom

PhantomSpec phantom_base(const io::Config& cfg, const std::string& preset) {
    PhantomSpec s;
    if (preset == "toy") s = toy_roi_spec(cfg.get_int("phantom.toy_size", 32), cfg.get_double("phantom.toy_spacing", 2.5));
    else if (preset != "default") throw InvalidArgument("unknown phantom preset '" + preset + "'");
    s.noise_sigma = cfg.get_double("phantom.noise_sigma", s.noise_sigma);
    s.arch = cfg.get_bool("phantom.arch", s.arch);
    s.bulge_amplitude = cfg.get_double("phantom.bulge_amplitude", s.bulge_amplitude);
    return s;
}

void cmd_phantom(const Common& c, std::size_t n, std::string preset) {
    require_out_dir(c);
    if (preset.empty()) preset = c.config.get_string("phantom.preset", "default");
    if (n == 0) n = static_cast<std::size_t>(c.config.get_int("phantom.n", 26));
    const auto specs = generate_cohort_specs(n, phantom_base(c.config, preset), PhantomJitter{}, c.seed);
    json j;
    j["schema_version"] = io::kManifestSchemaVersion;
    j["seed"] = c.seed;
    j["preset"] = preset;
    auto& arr = j["patients"] = json::array();
    for (const auto& p : specs) {
        const auto ph = generate_phantom(p.spec);
        const fs::path dir = fs::path(c.out_dir) / p.patient_id;
        io::write_volume((dir / "cta.nii.gz").string(), ph.cta);
        io::write_mask((dir / "cta_gt.nii.gz").string(), ph.cta_gt);
        io::write_volume((dir / "nc.nii.gz").string(), ph.nc);
        io::write_mask((dir / "nc_gt.nii.gz").string(), ph.nc_gt);
        json scans;
        for (const char* role : {"cta", "cta_gt", "nc", "nc_gt"})
            scans[role] = (fs::path(p.patient_id) / (std::string(role) + ".nii.gz")).generic_string();
        arr.push_back({{"patient_id", p.patient_id}, {"scans", scans}});
        std::cerr << "phantom " << p.patient_id << '\n';
    }
    write_text(fs::path(c.out_dir) / "phantoms.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------- split

io::SplitCounts parse_counts(const std::string& s) {
    io::SplitCounts c;
    char extra = 0;
    if (std::sscanf(s.c_str(), "%zu,%zu,%zu%c", &c.train, &c.valid, &c.test, &extra) != 3)
        throw InvalidArgument("--counts expects train,valid,test (e.g. 10,3,13)");
    return c;
}

void cmd_split(const Common& c, const std::string& cohort_path, std::string counts) {
    require_out_dir(c);
    const json cohort = read_json(cohort_path);
    const fs::path cohort_dir = fs::path(cohort_path).parent_path();
    std::vector<std::string> ids;
    std::map<std::string, std::map<std::string, std::string>> scans;
    for (const auto& p : cohort.at("patients")) {
        const auto id = p.at("patient_id").get<std::string>();
        ids.push_back(id);
        scans[id] = resolve_all(p.at("scans").get<std::map<std::string, std::string>>(), cohort_dir, c.out_dir);
    }
    if (counts.empty()) counts = c.config.get_string("split.counts", "10,3,13");
    auto m = io::group_split(ids, parse_counts(counts), c.seed);
    for (auto& e : m.entries) e.scans = scans[e.patient_id];
    io::save_manifest((fs::path(c.out_dir) / "split.json").string(), m);
    std::cerr << "split: train " << m.count(io::Cohort::kTrain) << ", valid " << m.count(io::Cohort::kValid)
              << ", test " << m.count(io::Cohort::kTest) << '\n';
}

// ---------------------------------------------------------------- augment

void cmd_augment(const Common& c, const std::string& manifest_path) {
    require_out_dir(c);
    const auto m = io::load_manifest(manifest_path);
    const fs::path mdir = fs::path(manifest_path).parent_path();
    AugmentConfig acfg;
    acfg.sigma = c.config.get_double("augment.sigma", acfg.sigma);
    acfg.amplitude = c.config.get_double("augment.amplitude", acfg.amplitude);
    acfg.ring_factor = c.config.get_double("augment.ring_factor", acfg.ring_factor);
    acfg.angle_jitter_deg = c.config.get_double("augment.angle_jitter_deg", acfg.angle_jitter_deg);

    io::SplitManifest out = m;
    for (auto& e : out.entries) e.scans = resolve_all(e.scans, mdir, c.out_dir);
    std::vector<io::AugmentedScan> aug;
    std::size_t index = 0;
    for (const auto& e : m.entries) {
        ++index;
        if (e.augmented_from || e.cohort == io::Cohort::kTest) continue;
        std::vector<io::AugmentedScan> mine(kAugmentPerPatient);
        for (int a = 0; a < kAugmentPerPatient; ++a) {
            char suffix[16];
            std::snprintf(suffix, sizeof suffix, "-aug%02d", a + 1);
            mine[a].id = e.patient_id + suffix;
            mine[a].source_patient = e.patient_id;
        }
        for (const std::string mod : {"cta", "nc"}) {
            if (!e.scans.count(mod) || !e.scans.count(mod + "_gt")) continue;
            const auto vol = io::read_volume(resolve(e.scans.at(mod), mdir));
            const auto gt = io::read_mask(resolve(e.scans.at(mod + "_gt"), mdir));
            Rng rng = make_stream(c.seed, "augment-" + mod, index);
            const auto pairs = augment_patient(vol, gt, acfg, rng);
            for (int a = 0; a < kAugmentPerPatient; ++a) {
                const fs::path dir = fs::path(c.out_dir) / mine[a].id;
                io::write_volume((dir / (mod + ".nii.gz")).string(), pairs[a].volume);
                io::write_mask((dir / (mod + "_gt.nii.gz")).string(), pairs[a].mask);
                mine[a].scans[mod] = (fs::path(mine[a].id) / (mod + ".nii.gz")).generic_string();
                mine[a].scans[mod + "_gt"] = (fs::path(mine[a].id) / (mod + "_gt.nii.gz")).generic_string();
            }
        }
        aug.insert(aug.end(), mine.begin(), mine.end());
        std::cerr << "augment " << e.patient_id << '\n';
    }
    out = io::attach_augmented(out, aug);
    io::save_manifest((fs::path(c.out_dir) / "split_augmented.json").string(), out);
    std::cerr << "augment: train " << out.count(io::Cohort::kTrain) << ", valid " << out.count(io::Cohort::kValid)
              << ", test " << out.count(io::Cohort::kTest) << " scans\n";
}

// ---------------------------------------------------------------- train

PipelineConfig pipeline_config(const io::Config& cfg) {
    PipelineConfig p;
    p.stage2_spacing = cfg.get_double("pipeline.stage2_spacing", p.stage2_spacing);
    p.lowres_inplane = cfg.get_int("pipeline.lowres_inplane", p.lowres_inplane);
    p.roi_xy = cfg.get_int("pipeline.roi_xy", p.roi_xy);
    p.box_margin = cfg.get_int("pipeline.box_margin", p.box_margin);
    return p;
}

/// Turn one scan + mask into the training input for a given model role.
std::optional<TrainingSample> make_sample(const std::string& id, const Volume3D& vol, LabelMask gt,
                                          const std::string& input, int classes, const PipelineConfig& pcfg) {
    if (classes == 2) gt = binarize(gt);
    if (input == "full") return TrainingSample{id, vol, gt};
    const Volume3D hi = resample_isotropic(vol, highres_grid_for(vol.grid, pcfg).spacing[0]);
    const LabelMask hi_gt = resample_onto(gt, hi.grid);
    if (input == "lowres") {
        const double f = stage1_factor(hi.grid, pcfg);
        return TrainingSample{id, downsample_inplane(hi, f), downsample_inplane(hi_gt, f)};
    }
    if (input.rfind("region:", 0) == 0) {
        const Region want = parse_region(input.substr(7));
        const OracleModel oracle(hi_gt, true);
        const auto det = detect_roi_highres(hi, oracle, Modality::kContrast, pcfg);
        for (const auto& rb : det.boxes)
            if (rb.region == want) {
                auto v = crop_roi(hi, rb.box, pcfg.roi_xy);
                auto [m, placement] = crop_roi(hi_gt, rb.box, pcfg.roi_xy);
                return TrainingSample{id, std::move(v.image), std::move(m)};
            }
        return std::nullopt;
    }
    throw InvalidArgument("unknown --input '" + input + "'");
}

void cmd_train(const Common& c, const std::string& manifest_path, std::string role, std::string input, int epochs) {
    require_out_dir(c);
    const auto& cfg = c.config;
    if (role.empty()) role = cfg.get_string("train.role", "cta");
    if (input.empty()) input = cfg.get_string("train.input", "full");
    if (role != "cta" && role != "nc") throw InvalidArgument("--role must be cta or nc");

    nn::UNetSpec spec;
    spec.depth = static_cast<int>(cfg.get_int("model.depth", 2));
    spec.base_channels = static_cast<int>(cfg.get_int("model.base_channels", 8));
    spec.attention = cfg.get_bool("model.attention", true);
    const std::string alpha = cfg.get_string("model.alpha_mode", "class-averaged");
    if (alpha != "class-averaged" && alpha != "per-channel") throw InvalidArgument("model.alpha_mode: unknown value");
    spec.alpha_mode = alpha == "per-channel" ? nn::AlphaMode::kPerChannel : nn::AlphaMode::kClassAveraged;
    spec.num_classes = static_cast<int>(cfg.get_int("model.classes", role == "nc" || input == "lowres" ? 2 : 3));
    if (cfg.get_string("model.norm", "instance") != "instance") spec.norm = nn::NormKind::kBatch;

    TrainConfig tc;
    tc.learning_rate = cfg.get_double("train.learning_rate", tc.learning_rate);
    tc.weight_decay = cfg.get_double("train.weight_decay", tc.weight_decay);
    tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size", tc.batch_size));
    tc.epochs = epochs > 0 ? epochs : static_cast<int>(cfg.get_int("train.epochs", tc.epochs));
    tc.augment_online = cfg.get_bool("train.augment_online", tc.augment_online);
    tc.checkpoint_every = static_cast<int>(cfg.get_int("train.checkpoint_every", 0));
    if (tc.checkpoint_every > 0) tc.checkpoint_dir = (fs::path(c.out_dir) / "checkpoints").string();
    tc.cosine_schedule = cfg.get_bool("train.cosine", false);
    tc.dice_epsilon = cfg.get_double("train.dice_epsilon", tc.dice_epsilon);
    tc.seed = c.seed;

    const auto m = io::load_manifest(manifest_path);
    const fs::path mdir = fs::path(manifest_path).parent_path();
    const auto pcfg = pipeline_config(cfg);
    auto load = [&](io::Cohort which) {
        std::vector<TrainingSample> out;
        for (const auto* e : m.cohort(which)) {
            if (!e->scans.count(role) || !e->scans.count(role + "_gt"))
                throw FormatError("manifest entry '" + e->patient_id + "' has no " + role + " scan");
            const auto vol = io::read_volume(resolve(e->scans.at(role), mdir));
            const auto gt = io::read_mask(resolve(e->scans.at(role + "_gt"), mdir));
            if (auto s = make_sample(e->source(), vol, gt, input, spec.num_classes, pcfg)) out.push_back(std::move(*s));
        }
        return out;
    };
    const auto train_set = load(io::Cohort::kTrain);
    const auto valid_set = load(io::Cohort::kValid);
    std::cerr << "train: " << train_set.size() << " training / " << valid_set.size() << " validation samples\n";

    auto result = train(nn::build_unet<float>(spec, c.seed), train_set, valid_set, tc, [](const EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " loss " << r.loss << " valid " << format_metric(r.valid.entire) << '\n';
    });
    nn::save_checkpoint((fs::path(c.out_dir) / "model.ckpt").string(), result.best);
    nn::save_checkpoint((fs::path(c.out_dir) / "model_last.ckpt").string(), result.last);
    write_text(fs::path(c.out_dir) / "history.csv", result.history.to_csv());
}

// ---------------------------------------------------------------- predict / pipeline

void cmd_predict(const Common& c, const std::string& model_path, const std::string& input, std::string output) {
    const auto model = UNetModel::load(model_path);
    const auto vol = io::read_volume(input);
    LabelMask mask(vol.grid, classes_for(model->num_classes()));
    mask.data() = nn::argmax_labels(model->predict(vol));
    if (output.empty()) {
        require_out_dir(c);
        output = (fs::path(c.out_dir) / "prediction.nii.gz").string();
    }
    io::write_mask(output, mask);
}

json box_json(const RegionBox& rb) {
    return {{"region", region_name(rb.region)},
            {"frame", rb.box.frame},
            {"lo", {rb.box.lo[0], rb.box.lo[1], rb.box.lo[2]}},
            {"hi", {rb.box.hi[0], rb.box.hi[1], rb.box.hi[2]}}};
}

void cmd_pipeline(const Common& c, const std::string& bundle_path, const std::string& input, std::string output,
                  const std::string& debug_dir) {
    const auto bundle = detail::tagged("bundle", [&] { return load_bundle(bundle_path); });
    const auto vol = detail::tagged("read", [&] { return io::read_volume(input); });
    const auto res = run_pipeline(vol, bundle, pipeline_config(c.config));
    if (output.empty()) {
        require_out_dir(c);
        output = (fs::path(c.out_dir) / "pipeline_mask.nii.gz").string();
    }
    detail::tagged("write", [&] {
        io::write_mask(output, res.full_mask);
        if (!debug_dir.empty()) {
            json boxes = json::array();
            for (const auto& rb : res.boxes) boxes.push_back(box_json(rb));
            write_text(fs::path(debug_dir) / "boxes.json", boxes.dump(2) + "\n");
            io::write_mask((fs::path(debug_dir) / "lowres_mask.nii.gz").string(), res.lowres_mask);
        }
        return 0;
    });
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& [stage, sec] : res.timing) std::cerr << "time " << stage << ' ' << sec << " s\n";
}

// ---------------------------------------------------------------- evaluate

/// Stacks history.csv files into one long-format curve table: model,epoch,loss,...
std::string training_curves(const std::vector<std::string>& specs) {
    std::string out;
    for (const auto& s : specs) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw InvalidArgument("--history expects model=path, got '" + s + "'");
        std::ifstream is(s.substr(eq + 1));
        if (!is) throw FormatError("cannot open '" + s.substr(eq + 1) + "'");
        std::string line;
        if (!std::getline(is, line) || line.rfind("epoch,", 0) != 0)
            throw FormatError("'" + s.substr(eq + 1) + "' is not a training history");
        if (out.empty()) out = "model," + line + "\n";
        while (std::getline(is, line))
            if (!line.empty()) out += s.substr(0, eq) + "," + line + "\n";
    }
    return out;
}

void cmd_evaluate(const Common& c, const std::string& pairs_path, const std::string& manifest_path,
                  const std::string& observers_path, const std::string& test_name,
                  const std::vector<std::string>& histories) {
    require_out_dir(c);
    const fs::path out(c.out_dir);
    if (pairs_path.empty() && manifest_path.empty() && observers_path.empty() && histories.empty())
        throw InvalidArgument("evaluate needs --pairs, --manifest, --observers or --history");
    if (!histories.empty()) write_text(out / "training_curve.csv", training_curves(histories));
    if (!pairs_path.empty()) {
        const json j = read_json(pairs_path);
        const fs::path base = fs::path(pairs_path).parent_path();
        MetricsReport report;
        for (const auto& p : j.at("pairs")) {
            const auto pred = io::read_mask(resolve(p.at("prediction").get<std::string>(), base));
            auto gt = io::read_mask(resolve(p.at("ground_truth").get<std::string>(), base));
            // binary models (non-contrast, stage 1) are scored against the whole aorta
            if (pred.is_binary() && !gt.is_binary()) gt = binarize(gt);
            report.add_scan(p.at("scan_id").get<std::string>(), p.value("model_id", std::string("model")), pred, gt);
        }
        write_text(out / "metrics_rows.csv", report.rows_csv());
        write_text(out / "metrics_summary.csv", report.summary_csv());
    }
    if (!manifest_path.empty()) {
        const LocationTest test = test_name == "permutation" ? LocationTest::kPermutation : LocationTest::kWelch;
        if (test_name != "welch" && test_name != "permutation") throw InvalidArgument("--test must be welch or permutation");
        const auto m = io::load_manifest(manifest_path);
        const fs::path mdir = fs::path(manifest_path).parent_path();
        std::string table;
        for (const std::string role : {"cta", "nc"}) {
            std::vector<HuStats> a, b;
            for (const auto& e : m.entries) {
                if (e.augmented_from || !e.scans.count(role)) continue;
                const auto s = hu_statistics(io::read_volume(resolve(e.scans.at(role), mdir)));
                (e.cohort == io::Cohort::kTest ? b : a).push_back(s);
            }
            if (a.size() < 2 || b.size() < 2) continue;
            const auto t = compare_cohorts(a, b, test, c.seed);
            table += (role == "cta" ? "# Contrast\n" : "# Non-Contrast\n") + t.to_csv();
        }
        if (table.empty()) throw InvalidArgument("manifest has fewer than 2 scans per cohort to compare");
        write_text(out / "table_cohorts.csv", table);
    }
    if (!observers_path.empty()) {
        const json j = read_json(observers_path);
        const fs::path base = fs::path(observers_path).parent_path();
        const auto ground = j.at("ground").get<std::string>();
        ObserverStudy study;
        for (const auto& s : j.at("scans")) {
            ObserverScan scan;
            scan.scan_id = s.at("scan_id").get<std::string>();
            for (const auto& [obs, path] : s.at("masks").items())
                scan.by_observer[obs] = io::read_mask(resolve(path.get<std::string>(), base));
            study.scans.push_back(std::move(scan));
        }
        const auto table = observer_report(study, ground);
        write_text(out / "table_observers.csv", table.to_csv());
        std::ostringstream icc_csv;
        icc_csv << "observer,icc,degenerate\n";
        for (const auto& o : table.columns) {
            const auto r = observer_icc(study, {ground, o});
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", r.value);
            icc_csv << o << ',' << buf << ',' << (r.degenerate ? 1 : 0) << '\n';
        }
        write_text(out / "icc.csv", icc_csv.str());
    }
}

// ---------------------------------------------------------------- compare

void cmd_compare(const Common& c, int epochs) {
    require_out_dir(c);
    const auto& cfg = c.config;
    io::SplitCounts counts;
    counts.train = static_cast<std::size_t>(cfg.get_int("compare.n_train", 10));
    counts.valid = static_cast<std::size_t>(cfg.get_int("compare.n_valid", 3));
    counts.test = static_cast<std::size_t>(cfg.get_int("compare.n_test", 5));
    const auto cohort = make_roi_cohort(counts, c.seed, phantom_base(cfg, "toy"));
    nn::UNetSpec spec;
    spec.depth = static_cast<int>(cfg.get_int("model.depth", 2));
    spec.base_channels = static_cast<int>(cfg.get_int("model.base_channels", 8));
    TrainConfig tc;
    tc.epochs = epochs > 0 ? epochs : static_cast<int>(cfg.get_int("train.epochs", 200));
    tc.learning_rate = cfg.get_double("train.learning_rate", tc.learning_rate);
    tc.weight_decay = cfg.get_double("train.weight_decay", tc.weight_decay);
    tc.batch_size = static_cast<int>(cfg.get_int("train.batch_size", tc.batch_size));
    tc.seed = c.seed;
    const auto r = compare_attention_vs_plain(cohort, spec, c.seed, tc);
    const fs::path out(c.out_dir);
    write_text(out / "table_attention_vs_plain.csv", r.table_csv());
    write_text(out / "metrics_rows.csv", r.report.rows_csv());
    write_text(out / "history_attention.csv", r.attention.history.to_csv());
    write_text(out / "history_plain.csv", r.plain.history.to_csv());
    std::cout << r.table_csv();
}

const std::set<std::string> kKnownKeys = {
    "phantom.n", "phantom.preset", "phantom.noise_sigma", "phantom.arch", "phantom.bulge_amplitude",
    "phantom.toy_size", "phantom.toy_spacing", "split.counts", "augment.sigma", "augment.amplitude",
    "augment.ring_factor", "augment.angle_jitter_deg", "model.depth", "model.base_channels", "model.attention",
    "model.alpha_mode", "model.classes", "model.norm", "train.learning_rate", "train.weight_decay",
    "train.batch_size", "train.epochs", "train.augment_online", "train.checkpoint_every", "train.cosine",
    "train.dice_epsilon", "train.role", "train.input", "pipeline.stage2_spacing", "pipeline.lowres_inplane",
    "pipeline.roi_xy", "pipeline.box_margin", "compare.n_train", "compare.n_valid", "compare.n_test",
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"vesselseg: aortic CT segmentation toolkit"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", common.seed, "root seed for every random stream");
        sub->add_option("--config", common.config_path, "key=value configuration file");
        sub->add_option("--out-dir", common.out_dir, "output directory");
    };

    std::size_t n = 0;
    std::string preset, cohort_path, counts, manifest, role, input, output, model, bundle, debug_dir, pairs,
        observers, test_name = "welch";
    int epochs = 0;
    std::vector<std::string> histories;

    auto* phantom = app.add_subcommand("phantom", "generate a synthetic CT cohort");
    add_common(phantom);
    phantom->add_option("--n", n, "number of patients (default 26)");
    phantom->add_option("--preset", preset, "default | toy");

    auto* split = app.add_subcommand("split", "patient-level train/valid/test split");
    add_common(split);
    split->add_option("--cohort", cohort_path, "phantoms.json")->required();
    split->add_option("--counts", counts, "train,valid,test (default 10,3,13)");

    auto* augment = app.add_subcommand("augment", "divergence/congruence augmentation of train and valid patients");
    add_common(augment);
    augment->add_option("--manifest", manifest, "split manifest")->required();

    auto* trainc = app.add_subcommand("train", "train a U-Net");
    add_common(trainc);
    trainc->add_option("--manifest", manifest, "split manifest")->required();
    trainc->add_option("--role", role, "cta | nc");
    trainc->add_option("--input", input, "full | lowres | region:arch | region:descending");
    trainc->add_option("--epochs", epochs, "overrides train.epochs");

    auto* predict = app.add_subcommand("predict", "run one model on a whole volume");
    add_common(predict);
    predict->add_option("--model", model, "checkpoint")->required();
    predict->add_option("--input", input, "volume")->required();
    predict->add_option("--output", output, "mask path");

    auto* pipeline = app.add_subcommand("pipeline", "two-stage cascade on a scan");
    add_common(pipeline);
    pipeline->add_option("--bundle", bundle, "bundle JSON")->required();
    pipeline->add_option("--input", input, "scan")->required();
    pipeline->add_option("--output", output, "mask path");
    pipeline->add_option("--debug-dir", debug_dir, "write boxes.json and the stage-1 mask here");

    auto* evaluate = app.add_subcommand("evaluate", "metric tables");
    add_common(evaluate);
    evaluate->add_option("--pairs", pairs, "prediction/ground-truth pairs JSON");
    evaluate->add_option("--manifest", manifest, "split manifest for the cohort characteristics table");
    evaluate->add_option("--observers", observers, "observer study JSON");
    evaluate->add_option("--test", test_name, "welch | permutation");
    evaluate->add_option("--history", histories, "model=history.csv, repeatable");

    auto* compare = app.add_subcommand("compare", "attention vs plain U-Net on phantom ROIs");
    add_common(compare);
    compare->add_option("--epochs", epochs, "overrides train.epochs (default 200)");

    CLI11_PARSE(app, argc, argv);
    const std::string name = app.get_subcommands().front()->get_name();
    try {
        if (!common.config_path.empty()) {
            common.config = io::Config::load(common.config_path);
            common.config.require_known(kKnownKeys);
        }
        if (name == "phantom") cmd_phantom(common, n, preset);
        else if (name == "split") cmd_split(common, cohort_path, counts);
        else if (name == "augment") cmd_augment(common, manifest);
        else if (name == "train") cmd_train(common, manifest, role, input, epochs);
        else if (name == "predict") cmd_predict(common, model, input, output);
        else if (name == "pipeline") cmd_pipeline(common, bundle, input, output, debug_dir);
        else if (name == "evaluate") cmd_evaluate(common, pairs, manifest, observers, test_name, histories);
        else if (name == "compare") cmd_compare(common, epochs);
    } catch (const StageError& e) {
        std::cerr << "error: [" << name << "] " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: [" << name << "] " << e.what() << '\n';
        return 1;
    }
    return 0;
}
