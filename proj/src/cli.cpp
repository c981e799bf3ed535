#include "xdet/cli.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xdet/annotation.hpp"
#include "xdet/chat_template.hpp"
#include "xdet/error.hpp"
#include "xdet/eval.hpp"
#include "xdet/grammar.hpp"
#include "xdet/grpo.hpp"
#include "xdet/qc.hpp"
#include "xdet/reward.hpp"

namespace xdet::cli {
namespace {

using nlohmann::json;

/// Writes to the --out file when given, else to the data stream.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : stream_(&fallback) {
    if (path.empty()) return;
    file_.open(path, std::ios::binary);
    if (!file_) throw Error(ErrorKind::io, "cannot write '" + path + "'");
    stream_ = &file_;
  }
  std::ostream& operator*() { return *stream_; }

  void close() {
    stream_->flush();
    if (file_.is_open()) {
      file_.close();
      if (file_.fail()) throw Error(ErrorKind::io, "failed writing output");
    }
  }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  return in;
}

int cmd_validate(const std::string& path, std::ostream& out, std::ostream& err) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  std::size_t records = 0;
  std::size_t errors = 0;
  std::size_t warnings = 0;
  std::map<std::string, std::size_t> first_line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ImageRecord record;
    try {
      record = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      err << path << ':' << line_no << ": schema-error: invalid JSON: " << e.what() << '\n';
      ++errors;
      continue;
    } catch (const Error& e) {
      err << path << ':' << line_no << ": " << to_string(e.kind()) << ": " << e.message() << '\n';
      ++errors;
      continue;
    }
    ++records;
    if (auto [it, inserted] = first_line.emplace(record.id, line_no); !inserted) {
      err << path << ':' << line_no << ": invariant-error: duplicate id '" << record.id
          << "' (first on line " << it->second << ")\n";
      ++errors;
    }
    for (const auto& v : validate_record(record)) {
      const bool is_error = v.severity == Severity::error;
      err << path << ':' << line_no << ": " << (is_error ? "error" : "warning") << ": record '"
          << record.id << "' " << v.field << ": " << v.rule << '\n';
      ++(is_error ? errors : warnings);
    }
  }
  if (records == 0 && errors == 0) {
    throw Error(ErrorKind::empty_dataset, "'" + path + "' contains no records");
  }
  out << records << " records, " << errors << " errors, " << warnings << " warnings\n";
  return errors ? 1 : 0;
}

int cmd_parse(const std::string& path, Sink& sink) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::schema, std::string("invalid JSON: ") + e.what(), line_no);
    }
    std::string text;
    json row = json::object();
    if (j.is_string()) {
      text = j.get<std::string>();
    } else if (j.is_object() && j.contains("text") && j["text"].is_string()) {
      text = j["text"].get<std::string>();
      if (j.contains("id")) row["id"] = j["id"];
    } else {
      throw Error(ErrorKind::schema, "expected a JSON string or an object with 'text'", line_no);
    }
    row.update(to_json(parse_structured(text)));
    *sink << row.dump() << '\n';
  }
  return 0;
}

std::vector<double> parse_crop(const std::string& text) {
  std::vector<double> v;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" ", used) != std::string::npos) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw CLI::ValidationError("--crop", "expected x1,y1,x2,y2");
    }
  }
  if (v.size() != 4) throw CLI::ValidationError("--crop", "expected x1,y1,x2,y2");
  return v;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Explainable synthetic-image detection toolkit", "xdet"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  std::string dataset, out_path, in_path, stage_name = "alpha", outputs, predictions, families,
                                          format = "json", crop, volunteer, reference, config,
                                          votes;
  std::uint64_t seed = 0;
  int k = 4;
  double scale = 0.0;

  const auto dataset_opt = [&](CLI::App* sub) {
    sub->add_option("--dataset", dataset, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  };
  const auto out_opt = [&](CLI::App* sub) {
    sub->add_option("--out", out_path, "Output file (default: standard output)");
  };

  std::function<int()> action;

  auto* validate = app.add_subcommand("validate", "Check every record of a dataset");
  dataset_opt(validate);
  validate->callback([&] { action = [&] { return cmd_validate(dataset, out, err); }; });

  auto* stats = app.add_subcommand("stats", "Dataset statistics as JSON");
  dataset_opt(stats);
  out_opt(stats);
  stats->callback([&] {
    action = [&] {
      Sink sink(out_path, out);
      *sink << to_json(dataset_stats(load_dataset(dataset))).dump(2) << '\n';
      sink.close();
      return 0;
    };
  });

  auto* render = app.add_subcommand("render", "Render chat conversations as JSONL");
  dataset_opt(render);
  render->add_option("--seed", seed, "Template selection seed");
  out_opt(render);
  render->callback([&] {
    action = [&] {
      const auto records = load_dataset(dataset);
      const auto conversations = render_dataset(records, seed);
      Sink sink(out_path, out);
      for (std::size_t i = 0; i < records.size(); ++i) {
        json j = to_json(conversations[i]);
        j["id"] = records[i].id;
        *sink << j.dump() << '\n';
      }
      sink.close();
      return 0;
    };
  });

  auto* parse = app.add_subcommand("parse", "Parse structured answers, one per line");
  parse->add_option("--in", in_path, "JSONL of strings or {id, text} objects")
      ->required()
      ->check(CLI::ExistingFile);
  out_opt(parse);
  parse->callback([&] {
    action = [&] {
      Sink sink(out_path, out);
      cmd_parse(in_path, sink);
      sink.close();
      return 0;
    };
  });

  auto* reward = app.add_subcommand("reward", "Score model outputs with a stage reward");
  reward->add_option("--stage", stage_name, "alpha, beta, gamma or a stage config path")
      ->capture_default_str();
  dataset_opt(reward);
  reward->add_option("--outputs", outputs, "Outputs JSONL {id, text}")
      ->required()
      ->check(CLI::ExistingFile);
  out_opt(reward);
  reward->callback([&] {
    action = [&] {
      const auto stage = resolve_stage(stage_name);
      const auto scored = score_outputs(load_outputs(outputs), load_dataset(dataset), stage);
      Sink sink(out_path, out);
      for (const auto& s : scored) {
        json j{{"id", s.id}};
        j.update(to_json(s.reward));
        *sink << j.dump() << '\n';
      }
      sink.close();
      return 0;
    };
  });

  auto* eval = app.add_subcommand("eval", "Accuracy and IoU report");
  dataset_opt(eval);
  eval->add_option("--predictions", predictions, "Predictions JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--families", families, "Generator to family map (default: built-in)")
      ->check(CLI::ExistingFile);
  eval->add_option("--format", format, "Report format")
      ->check(CLI::IsMember({"json", "csv", "markdown"}))
      ->capture_default_str();
  out_opt(eval);
  eval->callback([&] {
    action = [&] {
      const auto map = families.empty() ? default_family_map() : load_family_map(families);
      const auto report = evaluate(load_predictions(predictions), load_dataset(dataset), map);
      Sink sink(out_path, out);
      if (format == "json") {
        *sink << to_json(report).dump(2) << '\n';
      } else if (format == "csv") {
        write_csv(*sink, report);
      } else {
        write_markdown(*sink, report);
      }
      sink.close();
      return 0;
    };
  });

  auto* fold = app.add_subcommand("fold", "Stratified k-fold assignment");
  fold->add_option("--k", k, "Number of folds")->check(CLI::Range(2, 1 << 20))->capture_default_str();
  fold->add_option("--seed", seed, "Shuffle seed");
  dataset_opt(fold);
  out_opt(fold);
  fold->callback([&] {
    action = [&] {
      const auto records = load_dataset(dataset);
      const auto folds = make_folds(records, k, seed);
      for (const auto& w : folds.warnings) err << "warning: " << w << '\n';
      Sink sink(out_path, out);
      write_folds(*sink, records, folds);
      sink.close();
      return 0;
    };
  });

  auto* perturb = app.add_subcommand("perturb", "Crop or scale annotations");
  dataset_opt(perturb);
  auto* crop_opt = perturb->add_option("--crop", crop, "Crop box x1,y1,x2,y2");
  auto* scale_opt = perturb->add_option("--scale", scale, "Scale factor");
  crop_opt->excludes(scale_opt);
  out_opt(perturb);
  perturb->callback([&, scale_opt] {
    if (crop.empty() && scale_opt->count() == 0) {
      throw CLI::RequiredError("one of --crop or --scale");
    }
    const auto box = crop.empty() ? std::vector<double>{} : parse_crop(crop);
    action = [&, box] {
      std::vector<ImageRecord> result;
      for (const auto& r : load_dataset(dataset)) {
        auto t = box.empty() ? transform_scale(r, scale)
                             : transform_crop(r, BoundingBox{box[0], box[1], box[2], box[3]});
        for (const auto& d : t.diagnostics) err << "note: " << d << '\n';
        result.push_back(std::move(t.record));
      }
      Sink sink(out_path, out);
      write_dataset(*sink, result);
      sink.close();
      return 0;
    };
  });

  auto* qc = app.add_subcommand("qc", "Compare volunteer annotations with a reference");
  qc->add_option("--volunteer", volunteer, "Volunteer dataset JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  qc->add_option("--reference", reference, "Reference dataset JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  qc->add_option("--config", config, "QC config JSON (default: built-in thresholds)")
      ->check(CLI::ExistingFile);
  out_opt(qc);
  qc->callback([&] {
    action = [&] {
      const QcConfig cfg = config.empty() ? QcConfig{} : load_qc_config(config);
      const auto report = qc_report(load_dataset(volunteer), load_dataset(reference), cfg);
      Sink sink(out_path, out);
      *sink << to_json(report).dump(2) << '\n';
      sink.close();
      err << "box pass rate " << report.box_pass_rate << ", tag pass rate "
          << report.tag_pass_rate << ": " << (report.overall_pass ? "pass" : "fail") << '\n';
      return 0;
    };
  });

  auto* prefs = app.add_subcommand("prefs", "Aggregate pairwise preference votes");
  prefs->add_option("--votes", votes, "Votes JSONL")->required()->check(CLI::ExistingFile);
  out_opt(prefs);
  prefs->callback([&] {
    action = [&] {
      const auto file = load_votes(votes);
      Sink sink(out_path, out);
      *sink << to_json(aggregate_preferences(file.votes, file.side_labels)).dump(2) << '\n';
      sink.close();
      return 0;
    };
  });

  auto* grpo = app.add_subcommand("grpo-sim", "Run the staged GRPO simulation");
  grpo->add_option("--config", config, "Schedule config JSON (default: built-in schedule)")
      ->check(CLI::ExistingFile);
  out_opt(grpo);
  grpo->callback([&] {
    action = [&] {
      const ScheduleConfig cfg = config.empty() ? ScheduleConfig{} : load_schedule(config);
      const auto log = run_training(cfg);
      Sink sink(out_path, out);
      write_log_csv(*sink, log);
      sink.close();
      const auto& last = log.rows.back();
      err << "final held-out reward " << last.mean_reward << ", accuracy " << last.accuracy
          << ", mean IoU " << last.mean_iou << '\n';
      return 0;
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    return action ? action() : 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace xdet::cli
