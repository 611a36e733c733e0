#include <charconv>
#include <chrono>
#include <cstdio>

#include "mtsf/data.hpp"

namespace mtsf {

namespace {

using std::chrono::days;
using std::chrono::sys_days;
using std::chrono::sys_seconds;

bool read_int(std::string_view text, std::size_t pos, std::size_t width, int& out) {
  if (pos + width > text.size()) return false;
  const char* first = text.data() + pos;
  for (std::size_t i = 0; i < width; ++i) {
    if (first[i] < '0' || first[i] > '9') return false;
  }
  return std::from_chars(first, first + width, out).ec == std::errc();
}

sys_seconds to_sys(const Timestamp& ts) {
  const auto date = std::chrono::year{ts.year} / std::chrono::month{static_cast<unsigned>(ts.month)} /
                    std::chrono::day{static_cast<unsigned>(ts.day)};
  return sys_days{date} + std::chrono::hours{ts.hour} + std::chrono::minutes{ts.minute} +
         std::chrono::seconds{ts.second};
}

}  // namespace

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  Timestamp ts;
  if (!read_int(text, 0, 4, ts.year) || text.size() < 10 || text[4] != '-' || text[7] != '-' ||
      !read_int(text, 5, 2, ts.month) || !read_int(text, 8, 2, ts.day)) {
    return std::nullopt;
  }
  if (text.size() > 10) {
    if (text[10] != ' ' && text[10] != 'T') return std::nullopt;
    if (text.size() != 16 && text.size() != 19) return std::nullopt;
    if (!read_int(text, 11, 2, ts.hour) || text[13] != ':' || !read_int(text, 14, 2, ts.minute)) return std::nullopt;
    if (text.size() == 19 && (text[16] != ':' || !read_int(text, 17, 2, ts.second))) return std::nullopt;
  }
  const auto date = std::chrono::year{ts.year} / std::chrono::month{static_cast<unsigned>(ts.month)} /
                    std::chrono::day{static_cast<unsigned>(ts.day)};
  if (!date.ok() || ts.hour > 23 || ts.minute > 59 || ts.second > 59) return std::nullopt;
  return ts;
}

std::string format_timestamp(const Timestamp& ts) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d %02d:%02d:%02d", ts.year, ts.month, ts.day, ts.hour, ts.minute,
                ts.second);
  return buf;
}

int weekday(const Timestamp& ts) {
  const std::chrono::weekday wd{std::chrono::floor<days>(to_sys(ts))};
  return static_cast<int>(wd.iso_encoding()) - 1;
}

Timestamp add_seconds(const Timestamp& ts, std::int64_t seconds) {
  const sys_seconds t = to_sys(ts) + std::chrono::seconds{seconds};
  const auto day_start = std::chrono::floor<days>(t);
  const std::chrono::year_month_day ymd{day_start};
  const std::chrono::hh_mm_ss hms{t - day_start};
  return {static_cast<int>(ymd.year()),
          static_cast<int>(static_cast<unsigned>(ymd.month())),
          static_cast<int>(static_cast<unsigned>(ymd.day())),
          static_cast<int>(hms.hours().count()),
          static_cast<int>(hms.minutes().count()),
          static_cast<int>(hms.seconds().count())};
}

std::array<double, 4> stamp_features(const Timestamp& ts) {
  return {(ts.month - 1) / 11.0 - 0.5, (ts.day - 1) / 30.0 - 0.5, weekday(ts) / 6.0 - 0.5, ts.hour / 23.0 - 0.5};
}

}  // namespace mtsf
