// Command-line surface: train, evaluate, run inference on WAV files, count
// parameters and MACs, export the learned filterbank, and inspect dataset
// manifests. Exit codes: 0 success, 2 usage, 3 I/O or data, 4 numeric.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "sinckws/sinckws.hpp"

using namespace sinckws;

namespace {

constexpr long long kRealTimeBudgetMacs = 50'000'000;

struct DataOpts {
  std::string data;
  std::string manifest_csv;
  std::string version = "v2";
};

void add_data_options(CLI::App* cmd, DataOpts& d) {
  cmd->add_option("--data", d.data, "Speech Commands root directory")
      ->envname("SINCKWS_DATA");
  cmd->add_option("--manifest", d.manifest_csv,
                  "read a manifest CSV instead of scanning --data");
  cmd->add_option("--version", d.version, "dataset layout version")
      ->check(CLI::IsMember({"v1", "v2"}))
      ->capture_default_str();
}

DatasetManifest resolve_manifest(const DataOpts& d) {
  if (!d.manifest_csv.empty()) {
    std::string root = d.data;
    if (root.empty()) {
      const auto parent = std::filesystem::path(d.manifest_csv).parent_path();
      root = parent.empty() ? std::string(".") : parent.string();
    }
    return load_manifest_csv(d.manifest_csv, root);
  }
  if (d.data.empty())
    throw std::invalid_argument(
        "no dataset root: pass --data, set SINCKWS_DATA, or use --manifest");
  return build_manifest(d.data, version_from_name(d.version));
}

Model<float> resolve_model(const std::string& ckpt, const std::string& arch) {
  if (!ckpt.empty()) return load_checkpoint<float>(ckpt);
  return build_model<float>(default_config(variant_from_name(arch)), 0);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw io_error("cannot open output file for writing: " + path);
  return os;
}

TensorPtr<float> clip_tensor(const AudioClip& clip) {
  auto audio = make_tensor<float>({1, kClipSamples});
  std::copy(clip.begin(), clip.end(), audio->values.begin());
  return audio;
}

std::vector<double> softmax(const Tensor<float>& logits) {
  double maxv = logits.values[0];
  for (const float v : logits.values) maxv = std::max(maxv, static_cast<double>(v));
  std::vector<double> p(logits.values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits.values[i]) - maxv);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

void print_count_table(const Model<float>& model, int input_length, bool with_macs) {
  long long params = 0, macs = 0;
  std::cout << std::left << std::setw(28) << "name" << std::right << std::setw(12)
            << "params";
  if (with_macs) std::cout << std::setw(14) << "macs";
  std::cout << '\n';
  for (const auto& row : count_model(model, input_length)) {
    std::cout << std::left << std::setw(28) << row.name << std::right << std::setw(12)
              << row.params;
    if (with_macs) std::cout << std::setw(14) << row.macs;
    std::cout << '\n';
    params += row.params;
    macs += row.macs;
  }
  std::cout << std::left << std::setw(28) << "total" << std::right << std::setw(12)
            << params;
  if (with_macs) std::cout << std::setw(14) << macs;
  std::cout << '\n';
}

int run_train(const DataOpts& data, const std::string& arch, TrainConfig tc,
              const std::string& out, const std::string& history) {
  const auto manifest = resolve_manifest(data);
  auto model = build_model<float>(default_config(variant_from_name(arch)), tc.seed);
  tc.checkpoint_path = out;
  std::cout << "training " << arch << " model: " << total_parameters(model)
            << " parameters, " << manifest.split_size(Split::train)
            << " train / " << manifest.split_size(Split::val) << " val entries\n";
  const auto result = train(model, manifest, tc, &std::cout);
  if (!history.empty()) {
    auto os = open_out(history);
    write_history_csv(os, result.history);
  }
  std::cout << "best val_accuracy " << std::setprecision(6) << result.best_val_accuracy
            << " at epoch " << result.best_epoch << "; checkpoint " << out << '\n';
  return 0;
}

int run_eval(const std::string& ckpt, const DataOpts& data, const std::string& split,
             int batch_size, double silence_fraction, const std::string& confusion) {
  auto model = load_checkpoint<float>(ckpt);
  const auto manifest = resolve_manifest(data);
  const auto result =
      evaluate(model, manifest, split_from_name(split), batch_size, silence_fraction);
  std::printf("accuracy %.4g (%lld/%lld on %s)\n", result.accuracy, result.correct,
              result.total, split.c_str());
  auto os = open_out(confusion);
  write_confusion_csv(os, result);
  std::cout << "confusion matrix written to " << confusion << '\n';
  return 0;
}

int run_infer(const std::string& ckpt, const std::vector<std::string>& files) {
  auto model = load_checkpoint<float>(ckpt);
  int succeeded = 0;
  for (const auto& file : files) {
    try {
      const auto clip = condition_clip(load_wav(file));
      auto audio = clip_tensor(clip);
      auto logits = model_forward<float>(nullptr, model, audio, Mode::eval, nullptr);
      const auto p = softmax(*logits);
      const auto top = static_cast<std::size_t>(
          std::max_element(p.begin(), p.end()) - p.begin());
      std::cout << file << '\t' << class_names()[top];
      for (const double v : p) std::cout << '\t' << std::fixed << std::setprecision(6) << v;
      std::cout << '\n' << std::defaultfloat;
      ++succeeded;
    } catch (const io_error& e) {
      std::cerr << "error: " << e.what() << '\n';
    }
  }
  return succeeded > 0 ? 0 : 3;
}

int run_counts(const std::string& ckpt, const std::string& arch, int input_length,
               const std::string& out, bool with_macs) {
  const auto model = resolve_model(ckpt, arch);
  print_count_table(model, input_length, with_macs);
  if (with_macs) {
    const long long total = total_macs(model, input_length);
    std::cout << "real-time budget " << kRealTimeBudgetMacs << " MACs: "
              << (total < kRealTimeBudgetMacs ? "OK" : "EXCEEDED") << " (" << total
              << " per " << input_length << "-sample clip)\n";
  }
  if (!out.empty()) {
    auto os = open_out(out);
    write_count_csv(os, model, input_length);
  }
  return 0;
}

int run_export_filters(const std::string& ckpt, const std::string& out, int nfft) {
  const auto model = load_checkpoint<float>(ckpt);
  const auto ex = export_filters(model.sinc_params, model.config.sinc, nfft);
  auto os = open_out(out);
  write_filter_csv(os, ex);
  std::cout << "wrote " << ex.row_count() << " rows to " << out << '\n';
  return 0;
}

int run_manifest(const DataOpts& data, const std::string& out) {
  const auto manifest = resolve_manifest(data);
  std::cout << std::left << std::setw(10) << "class" << std::right << std::setw(9)
            << "train" << std::setw(9) << "val" << std::setw(9) << "test" << '\n';
  for (int c = 0; c < kNumClasses; ++c) {
    std::cout << std::left << std::setw(10) << class_names()[static_cast<std::size_t>(c)]
              << std::right << std::setw(9) << manifest.count(Split::train, c)
              << std::setw(9) << manifest.count(Split::val, c) << std::setw(9)
              << manifest.count(Split::test, c) << '\n';
  }
  std::cout << manifest.entries.size() << " entries, " << manifest.noise_files.size()
            << " background noise files\n";
  if (!out.empty()) {
    auto os = open_out(out);
    write_manifest_csv(os, manifest);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keyword spotting with a learnable sinc filterbank"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a key=value file (# comments)");

  DataOpts train_data;
  TrainConfig tc;
  std::string train_arch = "base", train_out = "model.skws", train_history;
  auto* cmd_train = app.add_subcommand("train", "train and keep the best-validation checkpoint");
  add_data_options(cmd_train, train_data);
  cmd_train->add_option("--arch", train_arch, "architecture variant")
      ->check(CLI::IsMember({"base", "grouped"}))
      ->capture_default_str();
  cmd_train->add_option("--epochs", tc.epochs)->capture_default_str();
  cmd_train->add_option("--batch-size", tc.batch_size)->capture_default_str();
  cmd_train->add_option("--lr", tc.lr0, "initial learning rate")->capture_default_str();
  cmd_train->add_option("--seed", tc.seed, "seed for all randomness")->capture_default_str();
  cmd_train->add_option("--silence-fraction", tc.silence_fraction,
                        "synthesized silence share of each epoch")
      ->capture_default_str();
  cmd_train->add_option("--stop-at-train-accuracy", tc.stop_at_train_accuracy,
                        "stop once training accuracy reaches this value (<=0: off)");
  cmd_train->add_option("--out", train_out, "checkpoint path")->capture_default_str();
  cmd_train->add_option("--history", train_history, "write per-epoch history CSV");

  DataOpts eval_data;
  std::string eval_ckpt, eval_split = "test", eval_confusion = "confusion.csv";
  int eval_batch = 64;
  double eval_silence = 1.0 / 12.0;
  auto* cmd_eval = app.add_subcommand("eval", "measure accuracy on a split");
  add_data_options(cmd_eval, eval_data);
  cmd_eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();
  cmd_eval->add_option("--split", eval_split)->check(CLI::IsMember({"val", "test"}))
      ->capture_default_str();
  cmd_eval->add_option("--batch-size", eval_batch)->capture_default_str();
  cmd_eval->add_option("--silence-fraction", eval_silence)->capture_default_str();
  cmd_eval->add_option("--confusion", eval_confusion, "confusion matrix CSV path")
      ->capture_default_str();

  std::string infer_ckpt;
  std::vector<std::string> infer_files;
  auto* cmd_infer = app.add_subcommand("infer", "classify WAV files");
  cmd_infer->add_option("--ckpt", infer_ckpt, "checkpoint to run")->required();
  cmd_infer->add_option("files", infer_files, "16 kHz mono PCM16 WAV files")->required();

  std::string params_ckpt, params_arch = "base", params_out;
  auto* cmd_params = app.add_subcommand("params", "per-tensor parameter counts");
  cmd_params->add_option("--ckpt", params_ckpt, "count a saved checkpoint");
  cmd_params->add_option("--arch", params_arch, "count a freshly built variant")
      ->check(CLI::IsMember({"base", "grouped"}))
      ->capture_default_str();
  cmd_params->add_option("--out", params_out, "write layer,name,params,macs CSV");

  std::string macs_ckpt, macs_arch = "grouped", macs_out;
  int macs_input_length = 16000;
  auto* cmd_macs = app.add_subcommand("macs", "per-layer multiply-accumulate counts");
  cmd_macs->add_option("--ckpt", macs_ckpt, "count a saved checkpoint");
  cmd_macs->add_option("--arch", macs_arch, "count a freshly built variant")
      ->check(CLI::IsMember({"base", "grouped"}))
      ->capture_default_str();
  cmd_macs->add_option("--input-length", macs_input_length, "clip length in samples")
      ->capture_default_str();
  cmd_macs->add_option("--out", macs_out, "write layer,name,params,macs CSV");

  std::string exp_ckpt, exp_out = "filters.csv";
  int exp_nfft = 4096;
  auto* cmd_export = app.add_subcommand("export-filters",
                                        "dump filter taps and frequency responses");
  cmd_export->add_option("--ckpt", exp_ckpt, "checkpoint to export")->required();
  cmd_export->add_option("--out", exp_out, "CSV path")->capture_default_str();
  cmd_export->add_option("--nfft", exp_nfft, "frequency grid size")->capture_default_str();

  DataOpts manifest_data;
  std::string manifest_out;
  auto* cmd_manifest = app.add_subcommand("manifest", "scan a dataset and report splits");
  add_data_options(cmd_manifest, manifest_data);
  cmd_manifest->add_option("--out", manifest_out, "write path,label,split CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*cmd_train) return run_train(train_data, train_arch, tc, train_out, train_history);
    if (*cmd_eval)
      return run_eval(eval_ckpt, eval_data, eval_split, eval_batch, eval_silence,
                      eval_confusion);
    if (*cmd_infer) return run_infer(infer_ckpt, infer_files);
    if (*cmd_params) return run_counts(params_ckpt, params_arch, 16000, params_out, false);
    if (*cmd_macs)
      return run_counts(macs_ckpt, macs_arch, macs_input_length, macs_out, true);
    if (*cmd_export) return run_export_filters(exp_ckpt, exp_out, exp_nfft);
    if (*cmd_manifest) return run_manifest(manifest_data, manifest_out);
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
