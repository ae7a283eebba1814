#include "traceseq/ehr/cohort_file.hpp"

#include <nlohmann/json.hpp>
#include <sstream>

#include "traceseq/errors.hpp"
#include "traceseq/io.hpp"

namespace traceseq::ehr {

using nlohmann::json;

namespace {

json visit_json(const RawVisit& v) {
  return {{"codes", v.codes}, {"observations", v.observations}, {"admit_day", v.admit_day}, {"age", v.age_years}};
}

RawVisit visit_from(const json& j) {
  RawVisit v;
  v.codes = j.at("codes").get<std::vector<std::string>>();
  v.observations = j.at("observations").get<std::vector<std::string>>();
  v.admit_day = j.at("admit_day").get<int>();
  v.age_years = j.at("age").get<double>();
  return v;
}

}  // namespace

std::string serialize_cohort(const CohortFile& file) {
  std::ostringstream out;
  json header = {{"format", "traceseq-cohort"},
                 {"format_version", kCohortFormatVersion},
                 {"generator_seed", file.header.generator_seed},
                 {"min_count", file.header.min_count},
                 {"label_codes", file.header.label_codes},
                 {"code_vocab_hash", file.header.code_vocab_hash},
                 {"observation_vocab_hash", file.header.observation_vocab_hash},
                 {"patients", file.patients.size()}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < file.patients.size(); ++i) {
    const auto& p = file.patients[i];
    json visits = json::array();
    for (const auto& v : p.visits) visits.push_back(visit_json(v));
    json line = {{"id", p.id},       {"race", p.race},     {"gender", p.gender},
                 {"label", p.label}, {"visits", visits}};
    if (i < file.splits.size() && !file.splits[i].empty()) line["split"] = file.splits[i];
    out << line.dump() << '\n';
  }
  return out.str();
}

CohortFile parse_cohort(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("cohort file is empty");
  CohortFile file;
  const json header = json::parse(line);
  if (header.value("format", "") != "traceseq-cohort") throw DataError("not a cohort file (bad header)");
  if (header.at("format_version").get<int>() != kCohortFormatVersion) throw DataError("unsupported cohort version");
  file.header.generator_seed = header.at("generator_seed").get<std::uint64_t>();
  file.header.min_count = header.at("min_count").get<std::size_t>();
  file.header.label_codes = header.at("label_codes").get<std::set<std::string>>();
  file.header.code_vocab_hash = header.at("code_vocab_hash").get<std::string>();
  file.header.observation_vocab_hash = header.at("observation_vocab_hash").get<std::string>();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      RawPatient p;
      p.id = j.at("id").get<std::string>();
      p.race = j.at("race").get<std::string>();
      p.gender = j.at("gender").get<std::string>();
      p.label = j.at("label").get<int>();
      for (const auto& v : j.at("visits")) p.visits.push_back(visit_from(v));
      file.splits.push_back(j.value("split", ""));
      file.patients.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw DataError("cohort line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return file;
}

void write_cohort(const std::filesystem::path& path, const CohortFile& file) {
  io::write_atomic(path, serialize_cohort(file));
}

FeatureSpace feature_space_of(const CohortFile& file) {
  return build_feature_space(file.patients, file.header.min_count, file.header.label_codes);
}

CohortFile read_cohort(const std::filesystem::path& path) {
  auto file = parse_cohort(io::read_file(path));
  const auto space = feature_space_of(file);
  if (space.codes.hash() != file.header.code_vocab_hash ||
      space.observations.hash() != file.header.observation_vocab_hash) {
    throw DataError("vocabulary hash mismatch in " + path.string());
  }
  return file;
}

}  // namespace traceseq::ehr
