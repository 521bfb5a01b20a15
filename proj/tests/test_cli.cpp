#include <doctest.h>

#include <filesystem>

#include "medart/app.hpp"
#include "medart/dataset.hpp"
#include "medart/lora.hpp"
#include "medart/denoiser.hpp"
#include "medart/vsg.hpp"
#include "support/workspace.hpp"

using namespace medart;
using medart::testing::cli;
using medart::testing::data_path;
using medart::testing::read_json;
using medart::testing::read_text;
using medart::testing::small_model_flags;
using medart::testing::operator+;
namespace fs = std::filesystem;

TEST_CASE("usage errors map to exit code 2") {
    CHECK(cli({}) == app::kUsage);
    CHECK(cli({"train", "--no-such-flag"}) == app::kUsage);
    CHECK(cli({"split", "--split-ratio", "2"}) == app::kUsage);
    CHECK(cli({"--version"}) == app::kOk);

    medart::testing::TempDir d("cli_usage");
    medart::testing::write_text(d.str("bad.ini"), "seed = 1\nno_such_key = 3\n");
    CHECK(cli({"split", "--config", d.str("bad.ini"), "--data-root", d.str()}) == app::kUsage);
}

TEST_CASE("runtime failures map to exit code 1") {
    medart::testing::TempDir d("cli_fail");
    CHECK(cli({"split", "--data-root", d.str("missing"), "--manifest", d.str("m.jsonl")}) == app::kError);
    CHECK(cli({"split", "--manifest", d.str("m.jsonl")}) == app::kError);
    CHECK(cli({"sample", "--run-dir", d.str("nothing"), "--prompt", "x"}) == app::kError);
    CHECK(cli({"evaluate", "--real", d.str(), "--gen", d.str()}) == app::kError);
}

TEST_CASE("split and caption commands") {
    medart::testing::CaptionedWorkspace ws("cli_caption");
    const DatasetManifest m = DatasetManifest::read(ws.manifest);
    CHECK(m.records.size() == 12);
    const auto recs = read_caption_manifest(ws.captions);
    CHECK(recs.size() == 12);
    for (const auto& r : recs) {
        CHECK_FALSE(r.failed);
        CHECK(r.token_count <= 120);
    }
    // resume: nothing left to do
    CHECK(cli({"caption", "--manifest", ws.manifest, "--metadata", ws.metadata, "--mock-vlm", "--captions-out",
               ws.captions}) == app::kOk);
    CHECK(read_caption_manifest(ws.captions).size() == 12);

    const std::string simple = ws.dir.str("simple.jsonl");
    CHECK(cli({"caption", "--manifest", ws.manifest, "--metadata", ws.metadata, "--simple-caption", "--captions-out",
               simple}) == app::kOk);
    for (const auto& r : read_caption_manifest(simple)) {
        CHECK(r.caption == simple_caption("endoscopic", r.category));
        CHECK(r.source == CaptionSource::SimpleTemplate);
    }
    CHECK(cli({"caption", "--manifest", ws.manifest, "--mock-vlm"}) == app::kError);
}

TEST_CASE("train, report and sample") {
    medart::testing::CaptionedWorkspace ws("cli_train", 5);
    const std::string run = ws.dir.str("run");
    const auto common = std::vector<std::string>{"--manifest", ws.manifest, "--captions", ws.captions, "--seed", "4",
                                                 "--batch", "2", "--lr", "1e-3", "--rank", "2"} +
                        small_model_flags();
    REQUIRE(cli(std::vector<std::string>{"train", "--run-dir", run, "--max-steps", "6", "--interval", "3"} + common) ==
            app::kOk);
    for (const char* f : {"config.json", "config.ini", "version.json", "metrics.jsonl", "model.ckpt", "adapters.lora"})
        CHECK(fs::exists(fs::path(run) / f));
    const auto version = read_json(run + "/version.json");
    CHECK(version["seed"] == 4);
    CHECK(version["command"] == "train");
    CHECK(version["version"].get<std::string>() == app::version_string());

    const auto rows = medart::testing::step_log_without_time(run + "/metrics.jsonl");
    REQUIRE(rows.size() == 6);
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto j = nlohmann::json::parse(rows[i]);
        CHECK(j["step"] == i + 1);
        CHECK(j["L_color"].is_null() == ((i + 1) % 3 != 0));
    }

    REQUIRE(cli({"report", "--run-dir", run}) == app::kOk);
    const auto summary = read_json(run + "/summary.json");
    CHECK(summary["color_evaluations"] == 2);
    CHECK(fs::exists(run + "/loss.png"));

    const std::string prompts = ws.dir.str("prompts.txt");
    medart::testing::write_text(prompts, "a red lesion\na green polyp\r\n\nblue mucosa\n");
    const std::string out1 = ws.dir.str("s1"), out2 = ws.dir.str("s2");
    REQUIRE(cli({"sample", "--run-dir", run, "--prompts-file", prompts, "--out-dir", out1, "--seed", "5",
                 "--sampler-steps", "4"}) == app::kOk);
    REQUIRE(cli({"sample", "--run-dir", run, "--prompts-file", prompts, "--out-dir", out2, "--seed", "5",
                 "--sampler-steps", "4"}) == app::kOk);
    int n = 0;
    for (const auto& e : fs::directory_iterator(out1)) {
        if (e.path().extension() != ".png") continue;
        ++n;
        CHECK(read_text(e.path().string()) == read_text((fs::path(out2) / e.path().filename()).string()));
    }
    CHECK(n == 3);

    const std::string out3 = ws.dir.str("s3");
    REQUIRE(cli({"sample", "--run-dir", run, "--prompts-from-manifest", "--manifest", ws.manifest, "--captions",
                 ws.captions, "--out-dir", out3, "--per-prompt", "2", "--sampler-steps", "2"}) == app::kOk);
    const DatasetManifest m = DatasetManifest::read(ws.manifest);
    int m_n = 0;
    for (const auto& e : fs::directory_iterator(out3)) m_n += e.path().extension() == ".png";
    CHECK(m_n == static_cast<int>(2 * m.indices(Split::Test).size()));
}

TEST_CASE("config files: replay and command-line precedence") {
    medart::testing::CaptionedWorkspace ws("cli_config");
    const std::string run = ws.dir.str("run");
    REQUIRE(cli(std::vector<std::string>{"train", "--run-dir", run, "--manifest", ws.manifest, "--captions",
                                         ws.captions, "--seed", "8", "--max-steps", "3", "--batch", "2", "--no-hldf"} +
                small_model_flags()) == app::kOk);
    const std::string replay = ws.dir.str("replay");
    REQUIRE(cli({"train", "--config", run + "/config.ini", "--run-dir", replay}) == app::kOk);
    CHECK(medart::testing::step_log_without_time(run + "/metrics.jsonl") ==
          medart::testing::step_log_without_time(replay + "/metrics.jsonl"));

    const std::string other = ws.dir.str("other");
    REQUIRE(cli({"train", "--config", run + "/config.ini", "--run-dir", other, "--seed", "9"}) == app::kOk);
    CHECK(read_json(other + "/config.json")["seed"] == 9);
    CHECK(read_json(other + "/config.json")["dit"]["hidden_dim"] == 16);
    CHECK(medart::testing::step_log_without_time(run + "/metrics.jsonl") !=
          medart::testing::step_log_without_time(other + "/metrics.jsonl"));
}

TEST_CASE("adapter placement flags") {
    medart::testing::CaptionedWorkspace ws("cli_lora");
    const auto base = std::vector<std::string>{"--manifest", ws.manifest, "--captions", ws.captions, "--max-steps",
                                               "1",          "--no-hldf"} +
                      small_model_flags();
    const std::string a = ws.dir.str("a"), b = ws.dir.str("b"), f = ws.dir.str("f");
    REQUIRE(cli(std::vector<std::string>{"train", "--run-dir", a} + base) == app::kOk);
    REQUIRE(cli(std::vector<std::string>{"train", "--run-dir", b, "--no-text-lora"} + base) == app::kOk);
    REQUIRE(cli(std::vector<std::string>{"train", "--run-dir", f, "--full-finetune"} + base) == app::kOk);
    const DenoiserModel m = DenoiserModel::load(a + "/model.ckpt");
    bool text_a = false, text_b = false;
    const LoraSet la = load_adapters(a + "/adapters.lora", m), lb = load_adapters(b + "/adapters.lora", m);
    for (const auto& [name, _] : la.adapters()) text_a |= name.rfind("text.", 0) == 0;
    for (const auto& [name, _] : lb.adapters()) text_b |= name.rfind("text.", 0) == 0;
    CHECK(text_a);
    CHECK_FALSE(text_b);
    CHECK_FALSE(fs::exists(f + "/adapters.lora"));
    CHECK(fs::exists(f + "/model.ckpt"));

    // fine-tuning adapters on top of a pretrained base
    const std::string g = ws.dir.str("g");
    REQUIRE(cli(std::vector<std::string>{"train", "--run-dir", g, "--base-model", f + "/model.ckpt"} + base) ==
            app::kOk);
    const std::string samples = ws.dir.str("gs");
    CHECK(cli({"sample", "--run-dir", g, "--prompt", "x", "--out-dir", samples, "--sampler-steps", "2"}) == app::kOk);
}

TEST_CASE("training without captions fails") {
    medart::testing::CaptionedWorkspace ws("cli_nocap");
    CHECK(cli(std::vector<std::string>{"train", "--run-dir", ws.dir.str("r"), "--manifest", ws.manifest,
                                       "--max-steps", "1"} +
              small_model_flags()) == app::kError);
}

TEST_CASE("evaluate against the golden report") {
    medart::testing::TempDir d("cli_eval");
    const auto args = std::vector<std::string>{"evaluate",          "--real", data_path("eval/real"), "--gen",
                                               data_path("eval/gen"), "--kid-subsets", "1", "--kid-subset-size", "10",
                                               "--extractor", "channel-stats"};
    CHECK(cli(args + std::vector<std::string>{"--report", d.str("r.json"), "--golden",
                                               data_path("eval/golden_report.json")}) == app::kOk);
    const auto rep = read_json(d.str("r.json"));
    CHECK(rep["n_real"] == 10);

    auto g = read_json(data_path("eval/golden_report.json"));
    g["fd"] = g["fd"].get<double>() + 1e-3;
    medart::testing::write_text(d.str("shifted.json"), g.dump());
    CHECK(cli(args + std::vector<std::string>{"--report", d.str("r2.json"), "--golden", d.str("shifted.json")}) ==
          app::kGoldenMismatch);

    CHECK(cli({"evaluate", "--real", data_path("eval/real"), "--gen", data_path("eval/real"), "--report",
               d.str("self.json"), "--kid-subsets", "5", "--kid-subset-size", "5", "--extractor", "tiny-cnn"}) ==
          app::kOk);
    CHECK(std::abs(read_json(d.str("self.json"))["fd"].get<double>()) < 1e-6);

    CHECK(cli(args + std::vector<std::string>{"--report", d.str("r3.json"), "--features-out", d.str("feat")}) ==
          app::kOk);
    CHECK(cli({"evaluate", "--real", d.str("feat/real.feat"), "--gen", d.str("feat/gen.feat"), "--kid-subsets", "1",
               "--kid-subset-size", "10", "--report", d.str("r4.json"), "--golden",
               data_path("eval/golden_report.json"), "--golden-tol", "1e-5"}) == app::kOk);

    medart::testing::write_text(d.str("series.jsonl"), "{\"step\":1,\"fd\":2.0}\n{\"step\":2,\"fd\":1.5}\n");
    CHECK(cli(args + std::vector<std::string>{"--report", d.str("r5.json"), "--series", d.str("series.jsonl"),
                                               "--plot", d.str("fd.png")}) == app::kOk);
    CHECK(fs::exists(d.str("fd.png")));
}
