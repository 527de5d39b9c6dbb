#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "test_util.hpp"
#include "vesselseg/io/config.hpp"
#include "vesselseg/io/manifest.hpp"
#include "vesselseg/io/nifti.hpp"

using namespace vesselseg;
using namespace vesselseg::io;
using namespace vstest;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> ids(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("P" + std::to_string(100 + i));
    return out;
}

std::vector<AugmentedScan> augment_all(const SplitManifest& m, int per_patient) {
    std::vector<AugmentedScan> out;
    for (auto c : {Cohort::kTrain, Cohort::kValid})
        for (const auto* e : m.cohort(c))
            for (int a = 1; a <= per_patient; ++a)
                out.push_back({e->patient_id + "-aug" + std::to_string(a), e->patient_id, {{"cta", "x.nii.gz"}}});
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct RunResult {
    int code = 0;
    std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& err_file) {
    const std::string cmd = std::string(VESSELSEG_CLI) + " " + args + " >/dev/null 2>" + err_file.string();
    const int status = std::system(cmd.c_str());
    return {WEXITSTATUS(status), slurp(err_file)};
}

void truncate_file(const fs::path& p, std::size_t n) {
    auto bytes = slurp(p);
    bytes.resize(n);
    std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
}

} // namespace

TEST(Split, StudyCohortSizes) {
    const auto m = group_split(ids(26), {10, 3, 13}, 42);
    EXPECT_EQ(m.count(Cohort::kTrain), 10u);
    EXPECT_EQ(m.count(Cohort::kValid), 3u);
    EXPECT_EQ(m.count(Cohort::kTest), 13u);
    EXPECT_EQ(m.seed, 42u);
    EXPECT_NO_THROW(m.validate());
}

TEST(Split, AllTrainAndDeterminism) {
    const auto all = group_split(ids(7), {7, 0, 0}, 1);
    EXPECT_EQ(all.count(Cohort::kTrain), 7u);
    EXPECT_EQ(group_split(ids(26), {10, 3, 13}, 5), group_split(ids(26), {10, 3, 13}, 5));
    // a different seed reassigns at least one patient
    const auto a = group_split(ids(26), {10, 3, 13}, 5), b = group_split(ids(26), {10, 3, 13}, 6);
    bool moved = false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) moved = moved || a.entries[i].cohort != b.entries[i].cohort;
    EXPECT_TRUE(moved);
}

TEST(Split, RejectsBadCountsAndDuplicates) {
    EXPECT_THROW(group_split(ids(26), {10, 3, 12}, 0), InvalidArgument);
    EXPECT_THROW(group_split({"A", "A"}, {1, 1, 0}, 0), InvalidArgument);
}

TEST(Augmented, ProtocolTotals) {
    const auto split = group_split(ids(26), {10, 3, 13}, 42);
    const auto m = attach_augmented(split, augment_all(split, 10));
    EXPECT_EQ(m.count(Cohort::kTrain), 110u);
    EXPECT_EQ(m.count(Cohort::kValid), 33u);
    EXPECT_EQ(m.count(Cohort::kTest), 13u);
    EXPECT_EQ(m.count(Cohort::kTrain) + m.count(Cohort::kValid), 143u);
    for (const auto* e : m.cohort(Cohort::kTrain)) {
        if (e->augmented_from) {
            EXPECT_EQ(m.find(*e->augmented_from).cohort, Cohort::kTrain);
        }
    }
    for (const auto* e : m.cohort(Cohort::kTest)) EXPECT_FALSE(e->augmented_from);
}

TEST(Augmented, TestPatientsAreRefused) {
    const auto m = group_split(ids(4), {2, 1, 1}, 3);
    const auto* test = m.cohort(Cohort::kTest).front();
    EXPECT_THROW(attach_augmented(m, {{"X-aug1", test->patient_id, {}}}), LeakageError);
    EXPECT_THROW(attach_augmented(m, {{"X-aug1", "nobody", {}}}), InvalidArgument);
    EXPECT_THROW(attach_augmented(m, {{"X-aug1", "", {}}}), InvalidArgument);
}

TEST(Manifest, NoLeakageOverRandomManifests) {
    Rng rng(21);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng() % 30;
        std::size_t tr = rng() % (n + 1), va = rng() % (n - tr + 1);
        auto m = group_split(ids(n), {tr, va, n - tr - va}, rng());
        m = attach_augmented(m, augment_all(m, static_cast<int>(rng() % 4)));
        std::map<Cohort, std::set<std::string>> sources;
        for (const auto& e : m.entries) sources[e.cohort].insert(e.source());
        for (auto [x, y] : {std::pair{Cohort::kTrain, Cohort::kValid}, {Cohort::kTrain, Cohort::kTest},
                            {Cohort::kValid, Cohort::kTest}})
            for (const auto& id : sources[x]) ASSERT_FALSE(sources[y].count(id)) << id;
    }
}

TEST(Manifest, JsonRoundTripAndLeakRejection) {
    const auto dir = scratch_dir("manifest");
    auto m = group_split(ids(6), {3, 1, 2}, 8);
    m = attach_augmented(m, augment_all(m, 2));
    save_manifest((dir / "m.json").string(), m);
    EXPECT_EQ(load_manifest((dir / "m.json").string()), m);

    auto j = to_json(m);
    for (auto& e : j["entries"])
        if (!e["augmented_from"].is_null()) {
            e["cohort"] = "test";
            break;
        }
    EXPECT_THROW(manifest_from_json(j), LeakageError);
    j = to_json(m);
    j["schema_version"] = 99;
    EXPECT_THROW(manifest_from_json(j), FormatError);
    std::ofstream(dir / "broken.json") << "{ not json";
    EXPECT_THROW(load_manifest((dir / "broken.json").string()), FormatError);
}

TEST(Nifti, VolumeRoundTripPlainAndGzip) {
    const auto dir = scratch_dir("nifti_vol");
    Rng rng(22);
    const Grid g{{7, 5, 3}, {0.8125, 0.8125, 2.5}, {-10.5, 3.25, 100.0}};
    const auto v = random_volume(rng, g);
    for (const char* name : {"v.nii", "v.nii.gz"}) {
        const auto path = (dir / name).string();
        write_volume(path, v);
        const auto r = read_volume(path);
        EXPECT_EQ(r.grid.dims, g.dims);
        for (int a = 0; a < 3; ++a) {
            EXPECT_NEAR(r.grid.spacing[a], g.spacing[a], 1e-6);
            EXPECT_NEAR(r.grid.origin[a], g.origin[a], 1e-4);
        }
        EXPECT_EQ(r.data, v.data) << name;
    }
    EXPECT_LT(fs::file_size(dir / "v.nii.gz"), fs::file_size(dir / "v.nii"));
    // gzip output carries no timestamp, so repeated writes are byte-identical
    const auto first = slurp(dir / "v.nii.gz");
    write_volume((dir / "v.nii.gz").string(), v);
    EXPECT_EQ(slurp(dir / "v.nii.gz"), first);
}

TEST(Nifti, MaskRoundTripKeepsClassSet) {
    const auto dir = scratch_dir("nifti_mask");
    Rng rng(23);
    const auto m = random_mask(rng, cube_grid(6, 5, 4, {0.5, 0.5, 1.0}), aorta_classes(), 0.5);
    write_mask((dir / "m.nii.gz").string(), m);
    EXPECT_TRUE(fs::exists(dir / "m.labels.json"));
    const auto r = read_mask((dir / "m.nii.gz").string());
    EXPECT_EQ(r, m);

    // an empty mask keeps its declared vocabulary only through the sidecar
    LabelMask empty(cube_grid(3, 3, 3), aorta_classes());
    write_mask((dir / "e.nii").string(), empty);
    EXPECT_EQ(read_mask((dir / "e.nii").string()).class_set, aorta_classes());
    fs::remove(dir / "e.labels.json");
    EXPECT_EQ(read_mask((dir / "e.nii").string()).class_set, binary_classes());
}

TEST(Nifti, TruncatedFileNamesMissingBytes) {
    const auto dir = scratch_dir("nifti_trunc");
    const auto path = dir / "t.nii";
    write_volume(path.string(), Volume3D(cube_grid(4, 4, 4), 1.0f)); // 352 + 256 bytes
    ASSERT_EQ(fs::file_size(path), 608u);
    truncate_file(path, 500);
    try {
        read_volume(path.string());
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("missing voxel bytes 500-607"), std::string::npos) << e.what();
    }
    truncate_file(path, 100);
    try {
        read_volume(path.string());
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("missing header bytes 100-347"), std::string::npos) << e.what();
    }
}

TEST(Nifti, MalformedHeaderNamesField) {
    const auto dir = scratch_dir("nifti_bad");
    const auto path = dir / "b.nii";
    write_volume(path.string(), Volume3D(cube_grid(2, 2, 2), 0.0f));
    auto bytes = slurp(path);
    const std::int16_t dt = 99;
    std::memcpy(bytes.data() + 70, &dt, 2);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    try {
        read_volume(path.string());
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("datatype 99"), std::string::npos) << e.what();
    }
    bytes[344] = 'x';
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    EXPECT_THROW(read_volume(path.string()), FormatError);
    EXPECT_THROW(read_mask((dir / "absent.nii").string()), FormatError);
    write_volume(path.string(), Volume3D(cube_grid(2, 2, 2), 0.5f));
    EXPECT_THROW(read_mask(path.string()), FormatError);
}

TEST(Config, ParsesTypedValues) {
    const auto c = Config::parse("# comment\n train.epochs = 200 \n\ntrain.lr=1e-3 # inline\nflag = yes\nname = toy\n");
    EXPECT_EQ(c.get_int("train.epochs", 0), 200);
    EXPECT_DOUBLE_EQ(c.get_double("train.lr", 0.0), 1e-3);
    EXPECT_TRUE(c.get_bool("flag", false));
    EXPECT_EQ(c.get_string("name", ""), "toy");
    EXPECT_EQ(c.get_int("missing", 7), 7);
    EXPECT_NO_THROW(c.require_known({"train.epochs", "train.lr", "flag", "name"}));
}

TEST(Config, ReportsErrors) {
    EXPECT_THROW(Config::parse("novalue\n"), FormatError);
    EXPECT_THROW(Config::parse("= 3\n"), FormatError);
    EXPECT_THROW(Config::parse("a=1\na=2\n"), FormatError);
    const auto c = Config::parse("n = 3x\nb = maybe\n");
    EXPECT_THROW(c.get_int("n", 0), FormatError);
    EXPECT_THROW(c.get_double("n", 0), FormatError);
    EXPECT_THROW(c.get_bool("b", false), FormatError);
    try {
        c.require_known({"n"});
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
    }
}

TEST(Cli, PhantomAndSplitAreReproducible) {
    const auto dir = scratch_dir("cli_repro");
    for (const char* run : {"a", "b"}) {
        const auto out = dir / run;
        ASSERT_EQ(run_cli("phantom --preset toy --n 4 --seed 9 --out-dir " + out.string(), dir / "err").code, 0);
        ASSERT_EQ(run_cli("split --cohort " + (out / "phantoms.json").string() + " --counts 2,1,1 --seed 9 --out-dir " +
                              out.string(),
                          dir / "err")
                      .code,
                  0);
    }
    for (const char* f : {"phantoms.json", "split.json", "P001/cta.nii.gz", "P001/cta_gt.nii.gz", "P004/nc_gt.nii.gz"})
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    const auto m = load_manifest((dir / "a" / "split.json").string());
    EXPECT_EQ(m.count(Cohort::kTrain), 2u);
    EXPECT_EQ(read_mask((dir / "a" / "P002" / "cta_gt.nii.gz").string()).class_set, aorta_classes());
}

TEST(Cli, FailuresExitNonzeroWithStageTag) {
    const auto dir = scratch_dir("cli_fail");
    auto r = run_cli("split --cohort " + (dir / "absent.json").string() + " --out-dir " + dir.string(), dir / "err");
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("[split]"), std::string::npos) << r.err;

    std::ofstream(dir / "bad.cfg") << "phantom.bogus = 1\n";
    r = run_cli("phantom --preset toy --n 1 --config " + (dir / "bad.cfg").string() + " --out-dir " + dir.string(),
                dir / "err");
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("phantom.bogus"), std::string::npos) << r.err;

    EXPECT_NE(run_cli("", dir / "err").code, 0);
    EXPECT_NE(run_cli("frobnicate", dir / "err").code, 0);
}
