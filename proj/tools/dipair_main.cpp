#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dipair/harness.hpp"
#include "dipair/kernels.hpp"
#include "dipair/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dipair;

namespace {

ExperimentConfig load_config(const std::string& config_path, std::optional<std::uint64_t> seed) {
    ExperimentConfig cfg =
        config_path.empty() ? default_experiment() : experiment_from_json_file(config_path);
    if (seed) cfg.seed = *seed;
    return cfg;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    os << text;
}

int cmd_generate(const ExperimentConfig& cfg, const std::string& out) {
    fs::create_directories(out);
    DatasetBundle bundle = generate(cfg.seed, cfg.dataset);
    write_dataset(bundle.train, out + "/train.jsonl");
    write_dataset(bundle.valid, out + "/valid.jsonl");
    write_dataset(bundle.test, out + "/test.jsonl");
    write_dataset(bundle.distill, out + "/distill.jsonl");
    write_file(out + "/generator.json", to_json_string(cfg.dataset));
    std::cout << "wrote " << bundle.train.size() << "/" << bundle.valid.size() << "/"
              << bundle.test.size() << " train/valid/test pairs and " << bundle.distill.size()
              << " unlabeled distillation pairs to " << out << "\n";
    return 0;
}

int cmd_train_teacher(const ExperimentConfig& cfg, const std::string& out) {
    fs::create_directories(out);
    DatasetBundle bundle = generate(cfg.seed, cfg.dataset);
    Teacher teacher = train_teacher(cfg.teacher, bundle.train, bundle.valid, cfg.seed);
    save_cross_attention_model(teacher.model, out + "/teacher.ckpt");
    write_file(out + "/teacher_gate.json",
               json{{"validation_auc", teacher.validation_auc},
                    {"gate_auc", teacher.gate_threshold},
                    {"passed", teacher.gate_passed()}}
                   .dump(2));
    std::cout << "teacher validation AUC " << teacher.validation_auc << " (gate "
              << teacher.gate_threshold << (teacher.gate_passed() ? ", passed)" : ", FAILED)")
              << "\n";
    return teacher.gate_passed() ? 0 : 1;
}

int cmd_annotate(const std::string& teacher_path, const std::string& gate_path,
                 const std::string& in_path, const std::string& out_path, float temperature) {
    Teacher teacher{load_cross_attention_model(teacher_path), -1.0, 0.95f};
    const json gate = json::parse(std::ifstream(gate_path));
    teacher.validation_auc = gate.at("validation_auc");
    teacher.gate_threshold = gate.at("gate_auc");
    std::vector<PairExample> records = load_dataset(in_path);
    annotate(teacher, records, temperature);
    write_dataset(records, out_path);
    std::cout << "annotated " << records.size() << " records -> " << out_path << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& out, const std::string& student,
              bool one_stage) {
    PreparedExperiment prep = prepare_experiment(cfg, out);
    const StudentSpec* spec = nullptr;
    for (const auto& s : cfg.students)
        if (s.name == student || student.empty()) {
            spec = &s;
            break;
        }
    if (!spec) throw ConfigError("no student named '" + student + "' in config");
    DiPairModel model(spec->config, cfg.seed);
    StudentRun run = train_student(model, prep, cfg, cfg.seed, !one_stage);
    const std::string sdir = out + "/students/" + spec->name;
    fs::create_directories(sdir);
    save_dipair_model(model, sdir + "/model.ckpt");
    run.report.checkpoint_path = sdir + "/model.ckpt";
    write_file(sdir + "/report.json", to_json_string(run.report));
    std::cout << spec->name << ": test AUC " << run.auc_test << ", test Pearson "
              << run.pearson_test << "\n";
    return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& out) {
    std::vector<PairExample> data = load_dataset(data_path);
    const json sidecar = json::parse(std::ifstream(model_path + ".json"));
    double auc = 0, rho = 0;
    if (sidecar.at("model_kind") == "dipair") {
        DiPairModel model = load_dipair_model(model_path);
        auc = evaluate_auc(model, data);
        rho = evaluate_pearson(model, data);
    } else {
        CrossAttentionModel model = load_cross_attention_model(model_path);
        auc = evaluate_auc(model, data);
        rho = evaluate_pearson(model, data);
    }
    const std::string text = json{{"auc_roc", auc}, {"pearson", rho}}.dump(2);
    if (!out.empty()) {
        fs::create_directories(out);
        write_file(out + "/evaluation.json", text);
    }
    std::cout << text << "\n";
    return 0;
}

int cmd_bench(const ExperimentConfig& cfg, const std::string& out, const std::string& student) {
    fs::create_directories(out);
    const StudentSpec* spec = &cfg.students.front();
    for (const auto& s : cfg.students)
        if (s.name == student) spec = &s;

    // Latency and FLOP counts do not depend on trained weights.
    CrossAttentionModel cross(cfg.teacher.model, cfg.seed);
    DiPairModel model(spec->config, cfg.seed);

    GeneratorConfig small = cfg.dataset;
    small.sizes = DatasetSizes{64, 64, 64, 64 * 20};
    DatasetBundle bundle = generate(cfg.seed, small);
    std::vector<PairExample> workload(bundle.test.begin(),
                                      bundle.test.begin() + std::min<std::size_t>(
                                                                bundle.test.size(),
                                                                cfg.latency_pairs));

    FlopInputs in;
    in.teacher_layers = cfg.teacher.model.num_layers;
    in.teacher_seq_len = cfg.teacher.model.max_sequence_length;
    in.teacher_hidden = cfg.teacher.model.hidden_size;
    in.teacher_intermediate = cfg.teacher.model.intermediate_size;
    in.student = spec->config;
    FlopReport flops = flop_estimate(in);

    LatencyReport lat =
        benchmark_latency(cross, model, workload, cfg.latency_repetitions, out);

    json report{{"student", spec->name},
                {"flops", json::parse(flops.to_json_string())},
                {"latency", json::parse(lat.to_json_string())},
                {"flop_vs_measured_ratio", lat.measured_speedup / flops.speedup}};
    write_file(out + "/bench.json", report.dump(2));
    std::cout << "FLOP speedup " << flops.speedup << "x, measured cached-path speedup "
              << lat.measured_speedup << "x -> " << out << "/bench.json\n";
    return 0;
}

int cmd_matrix(const ExperimentConfig& cfg, const std::string& out) {
    MatrixResult result = run_matrix(cfg, out);
    std::cout << "model,auc_test,delta_pct,flop_speedup\n";
    for (const auto& r : result.rows)
        std::cout << r.model << "," << r.auc_test << "," << r.delta_auc_test_pct << ","
                  << r.flop_speedup << "\n";
    std::cout << "wrote " << result.metrics_csv << " and " << result.tradeoff_csv << "\n";
    return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::string& out, const std::string& kind) {
    const std::string path = run_ablation(kind, cfg, out);
    std::cout << "wrote " << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DiPair: fast text-pair scoring via distilled dual encoders with a truncated head"};
    app.require_subcommand(1);

    std::string config_path, out = "out";
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "experiment config JSON")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out, "output directory");

    auto* generate_cmd = app.add_subcommand("generate", "emit the synthetic pair-task dataset");
    auto* teacher_cmd = app.add_subcommand("train-teacher", "train and gate the teacher");
    auto* annotate_cmd =
        app.add_subcommand("annotate", "soft-label a dataset with a trained teacher");
    std::string teacher_path, gate_path, in_path, out_file;
    float temperature = 1.f;
    annotate_cmd->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
    annotate_cmd->add_option("--gate", gate_path, "teacher gate JSON")->required();
    annotate_cmd->add_option("--in", in_path, "input JSONL")->required();
    annotate_cmd->add_option("--out-file", out_file, "annotated JSONL")->required();
    annotate_cmd->add_option("--temperature", temperature, "softening temperature");

    auto* train_cmd = app.add_subcommand("train", "train one student (teacher auto-prepared)");
    std::string student;
    bool one_stage = false;
    train_cmd->add_option("--student", student, "student name from the config");
    train_cmd->add_flag("--one-stage", one_stage, "skip the frozen-encoder stage");

    auto* eval_cmd = app.add_subcommand("evaluate", "AUC/Pearson of a checkpoint on a dataset");
    std::string model_path, data_path;
    eval_cmd->add_option("--model", model_path, "model checkpoint")->required();
    eval_cmd->add_option("--data", data_path, "JSONL dataset")->required();

    auto* bench_cmd = app.add_subcommand("bench", "FLOP estimate + single-thread latency");
    std::string bench_student;
    bench_cmd->add_option("--student", bench_student, "student name from the config");

    auto* matrix_cmd = app.add_subcommand("matrix", "teacher + all students + metric CSVs");
    auto* ablate_cmd = app.add_subcommand("ablate", "sweep one axis");
    std::string kind;
    ablate_cmd->add_option("--kind", kind, "ablation kind")->required();

    CLI11_PARSE(app, argc, argv);

    // DIPAIR_THREADS (when set) caps kernel worker threads.
    if (const char* env = std::getenv("DIPAIR_THREADS")) kernels::set_threads(std::atoi(env));

    try {
        const ExperimentConfig cfg = load_config(config_path, seed);
        if (generate_cmd->parsed()) return cmd_generate(cfg, out);
        if (teacher_cmd->parsed()) return cmd_train_teacher(cfg, out);
        if (annotate_cmd->parsed())
            return cmd_annotate(teacher_path, gate_path, in_path, out_file, temperature);
        if (train_cmd->parsed()) return cmd_train(cfg, out, student, one_stage);
        if (eval_cmd->parsed()) return cmd_evaluate(model_path, data_path, out);
        if (bench_cmd->parsed()) return cmd_bench(cfg, out, bench_student);
        if (matrix_cmd->parsed()) return cmd_matrix(cfg, out);
        if (ablate_cmd->parsed()) return cmd_ablate(cfg, out, kind);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
