#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "pattlite/tensor_io.hpp"

#include "testutil.hpp"

#ifndef PATTLITE_CLI_PATH
#error "PATTLITE_CLI_PATH must name the built binary"
#endif

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

CmdResult run_cli(const std::string& args, const std::string& workdir) {
    const std::string out_file = workdir + "/cli_out.txt";
    const std::string cmd =
        std::string("cd ") + workdir + " && " + PATTLITE_CLI_PATH + " " + args + " > " + out_file +
        " 2>&1";
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = testutil::read_file(out_file);
    return r;
}

// Config for a small model the CLI can train in seconds: 32x32 input keeps
// the full backbone table but shrinks every feature map.
void write_small_config(const std::string& path, int extra_unfreeze = 0) {
    std::ofstream os(path);
    os << "# small driver configuration\n";
    os << "input_size = 32\n";
    os << "pad_to = 0\n";
    os << "use_patch_extraction = false\n";
    os << "hidden_width = 16\n";
    os << "num_classes = 2\n";
    os << "";
    os << "max_epochs_stage1 = 2\n";
    os << "max_epochs_stage2 = 1\n";
    if (extra_unfreeze) os << "unfreeze_top_n = " << extra_unfreeze << "\n";
}

}  // namespace

TEST_CASE("help output enumerates the subcommands and exits 0") {
    testutil::TempDir tmp("clihelp");
    CmdResult r = run_cli("--help", tmp.str());
    CHECK(r.exit_code == 0);
    for (const char* word : {"train", "eval", "params", "sweep", "folds", "--threads", "--seed"})
        CHECK(r.output.find(word) != std::string::npos);
}

TEST_CASE("unknown flags and missing subcommands exit 2 before any work") {
    testutil::TempDir tmp("clibad");
    CHECK(run_cli("--definitely-not-a-flag", tmp.str()).exit_code == 2);
    CHECK(run_cli("params --no-such-option", tmp.str()).exit_code == 2);
    CHECK(run_cli("", tmp.str()).exit_code == 2);
}

TEST_CASE("unknown config keys are fatal with exit 2") {
    testutil::TempDir tmp("clicfg");
    const std::string cfg = tmp.str() + "/bad.cfg";
    {
        std::ofstream os(cfg);
        os << "numclasses = 7\n";  // misspelled
    }
    CmdResult r = run_cli("--config " + cfg + " params", tmp.str());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("unknown key") != std::string::npos);
}

TEST_CASE("params: default table lands in the documented range; assertion gates exit 5") {
    testutil::TempDir tmp("cliparams");
    CmdResult ok = run_cli("params --assert-total-range 1045000 1155000", tmp.str());
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("1104935") != std::string::npos);

    CmdResult fail = run_cli("params --assert-total-range 1 2", tmp.str());
    CHECK(fail.exit_code == 5);

    // The ablation flags shrink the table.
    CmdResult bare = run_cli("--no-patch --no-attention params", tmp.str());
    CHECK(bare.exit_code == 0);
    CHECK(bare.output.find("1104935") == std::string::npos);
}

TEST_CASE("params output rows sum to the printed total") {
    testutil::TempDir tmp("clirows");
    CmdResult r = run_cli("params", tmp.str());
    REQUIRE(r.exit_code == 0);
    std::istringstream is(r.output);
    std::string line;
    long long sum = 0, total = -1;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string name, shape;
        long long count = 0;
        if (line.rfind("total", 0) == 0) {
            ls >> name >> total;
        } else if (line.rfind("trainable", 0) == 0 || line.rfind("non_trainable", 0) == 0 ||
                   line.rfind("name", 0) == 0) {
            continue;
        } else if (ls >> name >> shape >> count) {
            sum += count;
        }
    }
    CHECK(total == 1104935);
    CHECK(sum == total);
}

TEST_CASE("train: data errors exit 3; missing dataset directories are reported") {
    testutil::TempDir tmp("clinodata");
    CmdResult r = run_cli("train --data-dir /nonexistent/dataset", tmp.str());
    CHECK(r.exit_code == 3);
}

TEST_CASE("train then re-train with --max-epochs 0 leaves weights byte-identical") {
    testutil::TempDir tmp("clifreeze");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "train", 6, 32, 91);
    const std::string cfg = tmp.str() + "/run.cfg";
    write_small_config(cfg);

    CmdResult first = run_cli("--config " + cfg + " --seed 5 train --stage train --data-dir data "
                              "--out w1.plw --report r1.csv",
                              tmp.str());
    REQUIRE(first.exit_code == 0);

    CmdResult second = run_cli("--config " + cfg + " --seed 5 --max-epochs 0 train --stage train "
                               "--data-dir data --weights w1.plw --out w2.plw",
                               tmp.str());
    REQUIRE(second.exit_code == 0);
    const std::string a = testutil::read_file(tmp.str() + "/w1.plw");
    const std::string b = testutil::read_file(tmp.str() + "/w2.plw");
    REQUIRE(!a.empty());
    CHECK(a == b);
}

TEST_CASE("train: identical seeds produce byte-identical reports and weights") {
    testutil::TempDir tmp("clidet");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "train", 6, 32, 92);
    const std::string cfg = tmp.str() + "/run.cfg";
    write_small_config(cfg);

    // Commands never mutate the dataset tree.
    auto tree_digest = [&] {
        std::string digest;
        std::vector<std::string> files;
        for (const auto& e :
             std::filesystem::recursive_directory_iterator(tmp.str() + "/data"))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            digest += f + ":" + std::to_string(std::filesystem::file_size(f)) + ";" +
                      testutil::read_file(f);
        return digest;
    };
    const std::string before = tree_digest();

    const std::string args = "--config " + cfg + " --seed 11 --threads 1 train --stage train "
                             "--data-dir data";
    CmdResult a = run_cli(args + " --out wa.plw --report ra.csv", tmp.str());
    REQUIRE(a.exit_code == 0);
    CmdResult b = run_cli(args + " --out wb.plw --report rb.csv", tmp.str());
    REQUIRE(b.exit_code == 0);
    CHECK(testutil::read_file(tmp.str() + "/ra.csv") == testutil::read_file(tmp.str() + "/rb.csv"));
    CHECK(testutil::read_file(tmp.str() + "/wa.plw") == testutil::read_file(tmp.str() + "/wb.plw"));
    CHECK(!testutil::read_file(tmp.str() + "/ra.csv").empty());
    CHECK(tree_digest() == before);
}

TEST_CASE("sweep rows are reproducible by an individual train run with the same seed") {
    testutil::TempDir tmp("clisweeprepro");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "train", 4, 32, 90);
    const std::string cfg = tmp.str() + "/run.cfg";
    {
        std::ofstream os(cfg);
        os << "input_size = 32\nnum_classes = 2\n";
    }
    CmdResult sweep = run_cli("--config " + cfg + " --seed 13 sweep --data-dir data "
                              "--taps b9_dw_act --kernels 2 --padding unpadded --epochs 2 "
                              "--out sweep.csv",
                              tmp.str());
    REQUIRE(sweep.exit_code == 0);
    std::istringstream is(testutil::read_file(tmp.str() + "/sweep.csv"));
    std::string header, row;
    std::getline(is, header);
    REQUIRE(std::getline(is, row));
    const double swept_best = std::stod(row.substr(row.rfind(',') + 1));

    // The same combination as a plain train run: identical config + seed.
    const std::string cfg2 = tmp.str() + "/combo.cfg";
    {
        std::ofstream os(cfg2);
        os << "input_size = 32\nnum_classes = 2\nsweep_kernel = 2\npad_to = 0\n";
        os << "backbone_tap = b9_dw_act\nmax_epochs_stage1 = 2\n";
    }
    CmdResult train = run_cli("--config " + cfg2 + " --seed 13 train --stage train "
                              "--data-dir data",
                              tmp.str());
    REQUIRE(train.exit_code == 0);
    // "stage done: best epoch N (train_acc M), stopped by ..."
    const auto pos = train.output.find("train_acc ");
    REQUIRE(pos != std::string::npos);
    const double trained_best = std::stod(train.output.substr(pos + 10));
    CHECK(trained_best == doctest::Approx(swept_best).epsilon(1e-9));
}

TEST_CASE("inspect: PLT stats, PLW manifests, and image import") {
    testutil::TempDir tmp("cliinspect");
    pattlite::Tensorf t = pattlite::Tensorf::from_data({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    pattlite::save_plt(tmp.str() + "/t.plt", t);
    CmdResult r = run_cli("inspect --file t.plt", tmp.str());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("shape [2,2]") != std::string::npos);
    CHECK(r.output.find("mean 2.5") != std::string::npos);

    // Import: PLT sample -> decoded tensor -> new PLT.
    pattlite::save_plt(tmp.str() + "/img.plt", pattlite::Tensorf({4, 4, 3}, 100.0f));
    CmdResult imp = run_cli("inspect --file img.plt --export-plt out.plt", tmp.str());
    CHECK(imp.exit_code == 0);
    pattlite::Tensorf back = pattlite::load_plt<float>(tmp.str() + "/out.plt");
    CHECK(back.shape() == std::vector<int>{4, 4, 3});

    CmdResult missing = run_cli("inspect --file nope.plt", tmp.str());
    CHECK(missing.exit_code == 3);
}

TEST_CASE("train: a divergent run exits 4") {
    testutil::TempDir tmp("clidiverge");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "train", 4, 64, 89);
    const std::string cfg = tmp.str() + "/run.cfg";
    {
        // Patch block kept on: chained exploded stages overflow float, so
        // the loss goes non-finite instead of merely saturating.
        std::ofstream os(cfg);
        os << "input_size = 64\npad_to = 8\n";
        os << "num_classes = 2\nmax_epochs_stage1 = 4\n";
        os << "stage1_lr = 1e25\n";
    }
    CmdResult r = run_cli("--config " + cfg + " --seed 5 train --stage train --data-dir data",
                          tmp.str());
    CHECK(r.exit_code == 4);
    CHECK(r.output.find("divergence") != std::string::npos);
}

TEST_CASE("train: a standalone finetune stage runs from loaded weights") {
    testutil::TempDir tmp("clifinetune");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "train", 4, 32, 88);
    const std::string cfg = tmp.str() + "/run.cfg";
    write_small_config(cfg);
    REQUIRE(run_cli("--config " + cfg + " --seed 2 train --stage train --data-dir data "
                    "--out w.plw",
                    tmp.str())
                .exit_code == 0);
    CmdResult ft = run_cli("--config " + cfg + " --seed 2 --unfreeze 9 train --stage finetune "
                           "--data-dir data --weights w.plw --out w2.plw --report ft.csv",
                           tmp.str());
    REQUIRE(ft.exit_code == 0);
    CHECK(testutil::read_file(tmp.str() + "/ft.csv").rfind("epoch,lr,", 0) == 0);
    CHECK(testutil::read_file(tmp.str() + "/w2.plw") != testutil::read_file(tmp.str() + "/w.plw"));
}

TEST_CASE("eval: subset equal to the full test list reproduces the plain metrics") {
    testutil::TempDir tmp("clieval");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "train", 4, 32, 93);
    testutil::write_synthetic_dataset(tmp.str() + "/data", "test", 3, 32, 94);
    const std::string cfg = tmp.str() + "/run.cfg";
    write_small_config(cfg);

    REQUIRE(run_cli("--config " + cfg + " --seed 3 train --stage train --data-dir data "
                    "--out w.plw",
                    tmp.str())
                .exit_code == 0);

    CmdResult plain = run_cli("--config " + cfg + " --seed 3 eval --weights w.plw "
                              "--data-dir data --out outA",
                              tmp.str());
    REQUIRE(plain.exit_code == 0);

    // Full-test subset list.
    {
        std::ofstream os(tmp.str() + "/full.txt");
        for (int cls = 0; cls < 2; ++cls)
            for (int i = 0; i < 3; ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "s%03d_c%d.plt", i, cls);
                os << name << "\n";
            }
    }
    CmdResult subset = run_cli("--config " + cfg + " --seed 3 eval --weights w.plw "
                               "--data-dir data --subset full.txt --out outB",
                               tmp.str());
    REQUIRE(subset.exit_code == 0);
    CHECK(testutil::read_file(tmp.str() + "/outA/confusion.csv") ==
          testutil::read_file(tmp.str() + "/outB/confusion.csv"));

    // Unknown subset entries warn but the run continues.
    {
        std::ofstream os(tmp.str() + "/partial.txt");
        os << "s000_c0.plt\nnot_a_file.png\n";
    }
    CmdResult warned = run_cli("--config " + cfg + " --seed 3 eval --weights w.plw "
                               "--data-dir data --subset partial.txt",
                               tmp.str());
    CHECK(warned.exit_code == 0);
    CHECK(warned.output.find("warning") != std::string::npos);

    // Manifest mismatch (different architecture) exits 3.
    CmdResult mismatch = run_cli("--config " + cfg + " --num-classes 5 eval --weights w.plw "
                                 "--data-dir data",
                                 tmp.str());
    CHECK(mismatch.exit_code == 3);
}

TEST_CASE("eval: gradcam flag writes PGM maps") {
    testutil::TempDir tmp("cligradcam");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "train", 4, 32, 95);
    testutil::write_synthetic_dataset(tmp.str() + "/data", "test", 2, 32, 96);
    const std::string cfg = tmp.str() + "/run.cfg";
    write_small_config(cfg);
    REQUIRE(run_cli("--config " + cfg + " --seed 4 train --stage train --data-dir data --out w.plw",
                    tmp.str())
                .exit_code == 0);
    CmdResult r = run_cli("--config " + cfg + " --seed 4 eval --weights w.plw --data-dir data "
                          "--gradcam-true --out maps",
                          tmp.str());
    REQUIRE(r.exit_code == 0);
    const std::string pgm =
        testutil::read_file(tmp.str() + "/maps/gradcam_class_bright_target0.pgm");
    CHECK(pgm.rfind("P5\n32 32\n255\n", 0) == 0);
}

TEST_CASE("sweep: cartesian rows, ranking, and reproducibility of the winner") {
    testutil::TempDir tmp("clisweep");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "train", 4, 32, 97);
    const std::string cfg = tmp.str() + "/run.cfg";
    {
        std::ofstream os(cfg);
        os << "input_size = 32\nnum_classes = 2\n";
    }
    CmdResult r = run_cli("--config " + cfg + " --seed 6 sweep --data-dir data "
                          "--taps b7_pw_act,b9_dw_act --kernels 1,2 --padding unpadded "
                          "--epochs 1 --out sweep.csv",
                          tmp.str());
    REQUIRE(r.exit_code == 0);
    std::istringstream is(testutil::read_file(tmp.str() + "/sweep.csv"));
    std::string header;
    std::getline(is, header);
    CHECK(header == "tap,kernel,padding,best_accuracy");
    int rows = 0;
    double prev = 2.0;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        ++rows;
        const auto last_comma = line.rfind(',');
        const double acc = std::stod(line.substr(last_comma + 1));
        CHECK(acc <= prev);  // ranked non-increasing
        prev = acc;
    }
    CHECK(rows == 4);  // 2 taps x 2 kernels x 1 padding
}

TEST_CASE("sweep: invalid kernel combinations are skipped with a logged reason") {
    testutil::TempDir tmp("clisweepskip");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "train", 4, 32, 98);
    const std::string cfg = tmp.str() + "/run.cfg";
    {
        std::ofstream os(cfg);
        os << "input_size = 32\nnum_classes = 2\n";
    }
    // At input 32 the b9 map is 2x2; kernel 3 cannot fit unpadded.
    CmdResult r = run_cli("--config " + cfg + " --seed 6 sweep --data-dir data "
                          "--taps b9_dw_act --kernels 2,3 --padding unpadded --epochs 1",
                          tmp.str());
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("skipped tap=b9_dw_act kernel=3") != std::string::npos);
}

TEST_CASE("folds: per-fold rows, mean equals the average, k is respected") {
    testutil::TempDir tmp("clifolds");
    testutil::write_synthetic_dataset(tmp.str() + "/data", "all", 6, 32, 99);
    const std::string cfg = tmp.str() + "/run.cfg";
    {
        std::ofstream os(cfg);
        os << "input_size = 32\nnum_classes = 2\nuse_patch_extraction = false\npad_to = 0\n";
        os << "hidden_width = 16\nmax_epochs_stage1 = 1\n";
        os << "max_epochs_stage2 = 0\n";
    }
    CmdResult r = run_cli("--config " + cfg + " --seed 7 folds --data-dir data/all --k 2",
                          tmp.str());
    REQUIRE(r.exit_code == 0);
    double sum = 0.0, mean = -1.0;
    int fold_rows = 0;
    std::istringstream is(r.output);
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "fold") {
            int idx;
            std::string acc_word;
            double acc;
            if (ls >> idx >> acc_word >> acc) {
                sum += acc;
                ++fold_rows;
            }
        } else if (word == "mean_accuracy") {
            ls >> mean;
        }
    }
    CHECK(fold_rows == 2);
    CHECK(mean == doctest::Approx(sum / 2.0).epsilon(1e-9));

    CmdResult missing = run_cli("--config " + cfg + " folds --data-dir /nope --k 2", tmp.str());
    CHECK(missing.exit_code == 3);
}
