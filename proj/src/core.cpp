#include "odflow/core.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace odflow {

namespace {

int parse_hhmm(const std::string& s) {
  if (s.size() != 5 || s[2] != ':')
    throw InvalidConfig("expected HH:MM time, got '" + s + "'");
  const int h = std::stoi(s.substr(0, 2));
  const int m = std::stoi(s.substr(3, 2));
  if (h < 0 || h > 23 || m < 0 || m > 59)
    throw InvalidConfig("time out of range: '" + s + "'");
  return h * 60 + m;
}

std::string format_hhmm(int minutes) {
  char buf[6];
  std::snprintf(buf, sizeof buf, "%02d:%02d", minutes / 60, minutes % 60);
  return buf;
}

}  // namespace

void NetworkSpec::validate() const {
  if (granularity_min <= 0) throw InvalidConfig("granularity must be positive");
  if (close_min <= open_min) throw InvalidConfig("close must be after open");
  if ((close_min - open_min) % granularity_min != 0)
    throw InvalidConfig("operating window must be a whole number of slots");
  if (stations.empty()) throw InvalidConfig("station list is empty");
  std::unordered_map<std::string, int> seen;
  for (const auto& s : stations) {
    if (!seen.emplace(s.id, 1).second)
      throw InvalidConfig("duplicate station id '" + s.id + "'");
    if (s.lat < -90.0 || s.lat > 90.0 || s.lon < -180.0 || s.lon > 180.0)
      throw InvalidConfig("station '" + s.id + "' has out-of-range coordinates");
  }
  if (study_days < 0) throw InvalidConfig("study_days must be nonnegative");
}

int NetworkSpec::station_index(const std::string& external_id) const {
  for (int i = 0; i < station_count(); ++i)
    if (stations[i].id == external_id) return i;
  return -1;
}

int weekday_of(const NetworkSpec& spec, int day) {
  // 1970-01-01 (epoch day 0) was a Thursday; +3 rotates Monday to 0.
  int64_t ep = spec.first_epoch_day + day;
  return static_cast<int>(((ep + 3) % 7 + 7) % 7);
}

WeekClass week_class(const NetworkSpec& spec, int day) {
  return weekday_of(spec, day) >= 5 ? WeekClass::Weekend : WeekClass::Weekday;
}

SlotIndex slot_of(int64_t ts, const NetworkSpec& spec) {
  const int64_t epoch_day = ts >= 0 ? ts / 86400 : (ts - 86399) / 86400;
  const int64_t sec_of_day = ts - epoch_day * 86400;
  const int64_t open_s = static_cast<int64_t>(spec.open_min) * 60;
  const int64_t close_s = static_cast<int64_t>(spec.close_min) * 60;
  if (sec_of_day < open_s || sec_of_day >= close_s)
    throw OutOfWindow("timestamp " + std::to_string(ts) + " outside operating window");
  const int64_t day = epoch_day - spec.first_epoch_day;
  if (day < 0 || (spec.study_days > 0 && day >= spec.study_days))
    throw OutOfPeriod("timestamp " + std::to_string(ts) + " outside study period");
  const int slot = static_cast<int>((sec_of_day - open_s) / (spec.granularity_min * 60));
  return SlotIndex{static_cast<int>(day), slot};
}

int64_t start_timestamp(const SlotIndex& s, const NetworkSpec& spec) {
  return (spec.first_epoch_day + s.day) * 86400 +
         static_cast<int64_t>(spec.open_min) * 60 +
         static_cast<int64_t>(s.slot) * spec.granularity_min * 60;
}

int64_t slot_gap(const SlotIndex& t, const SlotIndex& t_prime, const NetworkSpec& spec) {
  const int64_t T = spec.slots_per_day();
  const int64_t a = t.day * T + t.slot;
  const int64_t b = t_prime.day * T + t_prime.slot;
  if (b < a) throw NegativeGap("slot_gap: t_prime precedes t");
  return b - a;
}

void OdMatrix::validate() const {
  const int n = values.rows;
  if (values.cols != n) throw ShapeMismatch("OdMatrix must be square");
  for (double v : values.d)
    if (v < 0.0) throw InvalidConfig("OdMatrix entries must be nonnegative");
  if (kind == OdKind::Probability || kind == OdKind::DelayedProbability) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += values(i, j);
      if (s != 0.0 && std::abs(s - 1.0) > 1e-9)
        throw InvalidConfig("probability row " + std::to_string(i) + " sums to " +
                            std::to_string(s));
    }
  }
  if (kind == OdKind::DelayedRatio) {
    for (double v : values.d)
      if (v > 1.0 + 1e-12) throw InvalidConfig("delayed ratio entry exceeds 1");
  }
}

Mat Normalizer::apply(const Mat& m) const {
  Mat out(m.rows, m.cols);
  const double inv = 1.0 / std;
  for (size_t i = 0; i < m.size(); ++i) out.d[i] = (m.d[i] - mean) * inv;
  return out;
}

Mat Normalizer::invert(const Mat& m) const {
  Mat out(m.rows, m.cols);
  for (size_t i = 0; i < m.size(); ++i) out.d[i] = m.d[i] * std + mean;
  return out;
}

NetworkSpec NetworkSpec::from_json_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  NetworkSpec spec;
  spec.granularity_min = j.at("granularity_minutes").get<int>();
  spec.open_min = parse_hhmm(j.at("open").get<std::string>());
  spec.close_min = parse_hhmm(j.at("close").get<std::string>());
  for (const auto& s : j.at("stations")) {
    spec.stations.push_back(Station{s.at("id").get<std::string>(),
                                    s.at("lat").get<double>(),
                                    s.at("lon").get<double>()});
  }
  if (j.contains("study_first_day")) spec.first_epoch_day = j["study_first_day"].get<int64_t>();
  if (j.contains("study_days")) spec.study_days = j["study_days"].get<int>();
  spec.validate();
  return spec;
}

NetworkSpec NetworkSpec::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open network spec " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string NetworkSpec::to_json_text() const {
  nlohmann::json j;
  j["granularity_minutes"] = granularity_min;
  j["open"] = format_hhmm(open_min);
  j["close"] = format_hhmm(close_min);
  j["stations"] = nlohmann::json::array();
  for (const auto& s : stations)
    j["stations"].push_back({{"id", s.id}, {"lat", s.lat}, {"lon", s.lon}});
  j["study_first_day"] = first_epoch_day;
  j["study_days"] = study_days;
  return j.dump(2);
}

}  // namespace odflow
