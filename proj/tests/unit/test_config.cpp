#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "xvf/config.hpp"
#include "xvf/error.hpp"

using namespace xvf;

TEST_SUITE_BEGIN("config");

namespace {

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("parsing and typed access") {
  const auto kv = KeyValueConfig::parse(
      "# comment\n"
      "  name = hello world  \n"
      "ratio = 0.25 # trailing\n"
      "\n"
      "count = 12\n"
      "big = 18446744073709551615\n"
      "flag = yes\n"
      "off = false\n"
      "list = 1, 2,3\n"
      "count = 13\n");
  CHECK(kv.get("name") == "hello world");
  CHECK(kv.get_double("ratio", 0.0) == 0.25);
  CHECK(kv.get_size("count", 0) == 13);
  CHECK(kv.get_u64("big", 0) == 18446744073709551615ULL);
  CHECK(kv.get_bool("flag", false));
  CHECK_FALSE(kv.get_bool("off", true));
  CHECK(kv.get_sizes("list", {}) == std::vector<std::size_t>{1, 2, 3});
  CHECK(kv.get("absent", "fb") == "fb");
  CHECK(kv.get_size("absent", 7) == 7);
  CHECK(kv.contains("ratio"));
  CHECK_FALSE(kv.contains("absent"));
  CHECK(kv.keys().size() == 7);
  CHECK_THROWS_AS(kv.get("absent"), ConfigError);
  CHECK(KeyValueConfig::parse(kv.to_text()).to_text() == kv.to_text());
}

TEST_CASE("errors cite the source line") {
  const auto msg = error_of([] { KeyValueConfig::parse("a = 1\nb = 2\njunk line\n", "exp.conf"); });
  CHECK(msg.find("exp.conf:3") != std::string::npos);
  const auto kv = KeyValueConfig::parse("a = 1\nnum = abc\nneg = -3\n", "x.conf");
  const auto bad_num = error_of([&] { (void)kv.get_double("num", 0.0); });
  CHECK(bad_num.find("x.conf:2") != std::string::npos);
  CHECK(bad_num.find("abc") != std::string::npos);
  CHECK(error_of([&] { (void)kv.get_size("neg", 0); }).find("x.conf:3") != std::string::npos);
  CHECK_THROWS_AS((void)kv.get_bool("num", false), ConfigError);
  CHECK(kv.get_bool("a", false));
  CHECK_THROWS_AS(KeyValueConfig::parse(" = 3\n"), ConfigError);
}

TEST_CASE("known keys") {
  const auto kv = KeyValueConfig::parse("system = BA\ncorpus.dim = 5\ntypo = 1\n");
  const std::string_view known[] = {"system", "corpus.*"};
  const auto msg = error_of([&] { kv.require_known(known); });
  CHECK(msg.find("typo") != std::string::npos);
  CHECK(msg.find(":3") != std::string::npos);
  const std::string_view all[] = {"system", "corpus.*", "typo"};
  CHECK_NOTHROW(kv.require_known(all));
}

TEST_CASE("load from file") {
  const auto p = std::filesystem::temp_directory_path() / "xvf_test.conf";
  {
    std::ofstream out(p);
    out << "seed = 3\nbad\n";
  }
  const auto msg = error_of([&] { (void)KeyValueConfig::load(p); });
  CHECK(msg.find("xvf_test.conf:2") != std::string::npos);
  std::filesystem::remove(p);
  CHECK_THROWS(KeyValueConfig::load(p));
}

TEST_SUITE_END();
