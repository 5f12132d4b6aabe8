#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "vad/pipeline/run.hpp"

namespace vad::pipeline {

// A named change to the baseline configuration. Recognized forms:
//   no-rules  no-cleaning  captioner=alt  memory=K  tokens=N  window=N
//   backbone=conv_cvt|hierarchical_former  tasks=T1-T3 (task numbers 1..4)  level=object|frame
inline RunConfig apply_delta(RunConfig c, const std::string& delta) {
  const auto eq = delta.find('=');
  const std::string key = delta.substr(0, eq), val = eq == std::string::npos ? "" : delta.substr(eq + 1);
  auto num = [&] {
    try {
      return static_cast<std::size_t>(std::stoul(val));
    } catch (const std::exception&) {
      throw ConfigError("ablation '" + delta + "' needs a number");
    }
  };
  if (key == "no-rules") {
    c.rules.enabled = false;
  } else if (key == "no-cleaning") {
    c.refine.enabled = false;
  } else if (key == "captioner") {
    c.clients.captioner = val;
  } else if (key == "memory") {
    c.eval.memory_k = num();
  } else if (key == "tokens") {
    c.caption.max_tokens = static_cast<int>(num());
  } else if (key == "window") {
    c.refine.window = num();
  } else if (key == "backbone") {
    json e = c.model.encoder;
    e["variant"] = val;
    c.model.encoder = e.get<ssl::EncoderConfig>();
  } else if (key == "level") {
    c.level = val;
  } else if (key == "tasks") {
    ssl::TaskMask m{};
    std::stringstream ss(val);
    std::string t;
    while (std::getline(ss, t, '-')) {
      if (t.size() != 2 || t[0] != 'T' || t[1] < '1' || t[1] > '4') throw ConfigError("ablation '" + delta + "': tasks are T1..T4");
      m[static_cast<std::size_t>(t[1] - '1')] = true;
    }
    c.model.tasks = m;
  } else {
    throw ConfigError("unknown ablation '" + delta + "'");
  }
  c.normalize();
  c.validate();
  return c;
}

inline std::string delta_dir_name(const std::string& delta) {
  std::string s;
  for (char ch : delta) s += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return s;
}

struct AblationRow {
  std::string name;
  std::string config_hash;
  bool complete = false;
  json auc;  // number or null
  json verify_call_reduction;
  std::string error;
};

// Runs the baseline and each delta in <base.run_dir>/ablations/<delta>; every
// ablation may reuse artifacts from the baseline where its stages agree.
inline std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::string>& deltas, std::ostream* log = nullptr) {
  std::vector<std::pair<std::string, RunConfig>> runs{{"baseline", base}};
  for (const auto& d : deltas) {
    RunConfig c = apply_delta(base, d);
    c.run_dir = (fs::path(base.run_dir) / "ablations" / delta_dir_name(d)).string();
    runs.emplace_back(d, c);
  }
  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : runs) {
    AblationRow row{name, config_hash(cfg), false, nullptr, nullptr, ""};
    if (log) *log << "== " << name << std::endl;
    try {
      RunOptions o;
      o.log = log;
      if (name != "baseline") o.reuse_dirs = {base.run_dir};
      const auto r = run_pipeline(cfg, o);
      if (!r.report.is_null()) {
        row.complete = true;
        row.auc = r.report.at("metrics").at("auc");
        row.verify_call_reduction = r.report.at("llm_calls").at("verify_call_reduction");
      }
    } catch (const std::exception& e) {
      row.error = e.what();
      if (log) *log << "ablation " << name << " incomplete: " << e.what() << std::endl;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json ablation_json(const std::vector<AblationRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"name", r.name}, {"config_hash", r.config_hash}, {"complete", r.complete}, {"auc", r.auc},
                   {"verify_call_reduction", r.verify_call_reduction}, {"error", r.error}});
  return out;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "ablation                     AUC      call reduction\n";
  for (const auto& r : rows) {
    char line[160];
    auto f = [](const json& j) { return j.is_number() ? std::to_string(j.get<double>()).substr(0, 6) : std::string("n/a"); };
    std::snprintf(line, sizeof line, "%-28s %-8s %-8s%s\n", r.name.c_str(), r.complete ? f(r.auc).c_str() : "-",
                  r.complete ? f(r.verify_call_reduction).c_str() : "-", r.complete ? "" : "  incomplete");
    os << line;
  }
  return os.str();
}

}  // namespace vad::pipeline
