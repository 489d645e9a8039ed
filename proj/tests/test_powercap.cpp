#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <thread>

#include "energyprobe/powercap.hpp"
#include "support/fixture.hpp"

using namespace energyprobe;
using fixture::PowercapTree;

namespace {
std::vector<std::string> ids(const std::vector<Channel>& channels) {
  std::vector<std::string> out;
  for (const auto& c : channels) out.push_back(c.id);
  return out;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an energyprobe::Error");
  return Errc::domain;
}
}  // namespace

TEST_CASE("check_support accepts a minimal zone", "[powercap][support]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1000);
  const auto report = check_support(tree.root());
  CHECK(report.supported());
  CHECK(report.root == tree.root().string());
}

TEST_CASE("check_support reports an absent tree", "[powercap][support]") {
  fixture::TempDir empty;
  auto report = check_support(empty.path());
  CHECK(report.status == SupportStatus::absent);
  CHECK_FALSE(report.message.empty());

  report = check_support(empty.path() / "does-not-exist");
  CHECK(report.status == SupportStatus::absent);
}

TEST_CASE("check_support distinguishes permission problems", "[powercap][support]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1000).subzone(0, 0, "core", 10);
  const auto energy = tree.subzone_dir(0, 0) / "energy_uj";
  std::filesystem::permissions(energy, std::filesystem::perms::owner_read);

  // Result is passed back through the child's exit code: 0 = permission
  // status with the exact path named, 1 = anything else.
  const int rc = fixture::run_unprivileged([&] {
    const auto report = check_support(tree.root());
    const bool ok = report.status == SupportStatus::permission &&
                    report.message.find(energy.string()) != std::string::npos &&
                    report.message.find("/sys/class/powercap") != std::string::npos;
    return ok ? 0 : 1;
  });
  CHECK(rc == 0);
}

TEST_CASE("discover_zones builds ids from socket and names", "[powercap][discover]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1).subzone(0, 0, "core", 2).subzone(0, 1, "dram", 3, 65712999613ULL);
  const auto channels = discover_zones(tree.root());
  CHECK(ids(channels) ==
        std::vector<std::string>{"cpu:0:package-0", "cpu:0:package-0:core", "cpu:0:package-0:dram"});
  CHECK(channels[0].kind == ChannelKind::cpu_domain);
  CHECK(channels[1].kind == ChannelKind::cpu_subdomain);
  CHECK(channels[2].name == "dram");
  CHECK(channels[2].max_energy_range == 65712999613ULL);
  CHECK(channels[0].max_energy_range == fixture::kRaplRange);
}

TEST_CASE("discover_zones handles two sockets", "[powercap][discover]") {
  PowercapTree tree;
  tree.zone(1, "package-1", 1).subzone(1, 0, "dram", 1);
  tree.zone(0, "package-0", 1).subzone(0, 0, "dram", 1);
  const auto channels = discover_zones(tree.root());
  CHECK(ids(channels) == std::vector<std::string>{"cpu:0:package-0", "cpu:0:package-0:dram",
                                                  "cpu:1:package-1", "cpu:1:package-1:dram"});
  auto sorted = ids(channels);
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == ids(channels));
}

TEST_CASE("discover_zones is a pure function of the tree", "[powercap][discover]") {
  PowercapTree a;
  PowercapTree b;
  for (auto* t : {&a, &b}) {
    t->zone(0, "package-0", 5).subzone(0, 0, "core", 6).zone(1, "psys", 7);
  }
  CHECK(discover_zones(a.root()) == discover_zones(b.root()));
  CHECK(discover_zones(a.root()) == discover_zones(a.root()));
}

TEST_CASE("subzone ids extend their parent id", "[powercap][discover]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1).subzone(0, 0, "core", 1).subzone(0, 1, "uncore", 1);
  tree.zone(1, "package-1", 1).subzone(1, 0, "dram", 1);
  const auto zones = scan_zones(tree.root());
  for (const auto& z : zones) {
    if (!z.is_subzone) continue;
    const std::string parent = cpu_channel_id(z.socket, "package-" + std::to_string(z.socket));
    CHECK(z.channel_id.size() > parent.size());
    CHECK(z.channel_id.rfind(parent, 0) == 0);
  }
}

TEST_CASE("psys is treated like any other zone", "[powercap][discover]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1).zone(1, "psys", 1);
  CHECK(ids(discover_zones(tree.root())) ==
        std::vector<std::string>{"cpu:0:package-0", "cpu:1:psys"});
}

TEST_CASE("sysfs-style flat subzone links and the control dir are ignored", "[powercap][discover]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1).subzone(0, 0, "core", 1);
  // The kernel also links every subzone at the top level and has a bare
  // intel-rapl control-type directory.
  std::filesystem::create_directory_symlink(tree.subzone_dir(0, 0), tree.root() / "intel-rapl:0:0");
  std::filesystem::create_directory(tree.root() / "intel-rapl");
  std::filesystem::create_directory(tree.root() / "unrelated");
  CHECK(ids(discover_zones(tree.root())) ==
        std::vector<std::string>{"cpu:0:package-0", "cpu:0:package-0:core"});
}

TEST_CASE("mmio zones duplicating an MSR zone are dropped", "[powercap][discover]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1);
  const auto mmio = tree.root() / "intel-rapl-mmio:0";
  std::filesystem::create_directory(mmio);
  fixture::write_file(mmio / "name", "package-0\n");
  fixture::write_file(mmio / "energy_uj", "9\n");
  fixture::write_file(mmio / "max_energy_range_uj", "100\n");
  const auto zones = scan_zones(tree.root());
  REQUIRE(zones.size() == 1);
  CHECK(zones[0].dir_path == tree.zone_dir(0));

  // An mmio zone alone is accepted with its numeric socket index.
  PowercapTree only;
  const auto m2 = only.root() / "intel-rapl-mmio:0";
  std::filesystem::create_directory(m2);
  fixture::write_file(m2 / "name", "package-0\n");
  fixture::write_file(m2 / "energy_uj", "9\n");
  fixture::write_file(m2 / "max_energy_range_uj", "100\n");
  CHECK(ids(discover_zones(only.root())) == std::vector<std::string>{"cpu:0:package-0"});
}

TEST_CASE("malformed range file is a parse error naming the file", "[powercap][errors]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1);
  const auto range = tree.zone_dir(0) / "max_energy_range_uj";
  fixture::write_file(range, "abc\n");
  try {
    discover_zones(tree.root());
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::parse_error);
    CHECK(std::string(e.what()).find(range.string()) != std::string::npos);
  }
}

TEST_CASE("malformed name file is a parse error", "[powercap][errors]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1);
  fixture::write_file(tree.zone_dir(0) / "name", "\n");
  CHECK(code_of([&] { discover_zones(tree.root()); }) == Errc::parse_error);
}

TEST_CASE("nesting deeper than zone/subzone is rejected", "[powercap][errors]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1).subzone(0, 0, "core", 1);
  std::filesystem::create_directory(tree.subzone_dir(0, 0) / "intel-rapl:0:0:0");
  CHECK(code_of([&] { scan_zones(tree.root()); }) == Errc::parse_error);
}

TEST_CASE("discover on an unsupported root throws the support report", "[powercap][errors]") {
  fixture::TempDir empty;
  try {
    discover_zones(empty.path());
    FAIL("expected throw");
  } catch (const UnsupportedHostError& e) {
    CHECK(e.report().status == SupportStatus::absent);
  }
}

TEST_CASE("read_energy_uj parses and tolerates whitespace", "[powercap][read]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 0);
  auto zone = scan_zones(tree.root()).at(0);
  const auto file = tree.zone_dir(0) / "energy_uj";

  fixture::write_file(file, "1234567\n");
  CHECK(read_energy_uj(zone) == 1234567);
  fixture::write_file(file, "0");
  CHECK(read_energy_uj(zone) == 0);
  fixture::write_file(file, "  42  \n");
  CHECK(read_energy_uj(zone) == 42);
}

TEST_CASE("read_energy_uj enforces the declared range", "[powercap][read]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 0, 5000);
  auto zone = scan_zones(tree.root()).at(0);
  fixture::write_file(tree.zone_dir(0) / "energy_uj", "5000\n");
  CHECK(read_energy_uj(zone) == 5000);
  fixture::write_file(tree.zone_dir(0) / "energy_uj", "5001\n");
  CHECK(code_of([&] { read_energy_uj(zone); }) == Errc::corrupt_counter);
  fixture::write_file(tree.zone_dir(0) / "energy_uj", "-1\n");
  CHECK(code_of([&] { read_energy_uj(zone); }) == Errc::parse_error);
}

TEST_CASE("read_energy_uj reports denied access with remediation", "[powercap][read]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 7);
  auto zone = scan_zones(tree.root()).at(0);
  std::filesystem::permissions(tree.zone_dir(0) / "energy_uj", std::filesystem::perms::owner_read);
  const int rc = fixture::run_unprivileged([&] {
    try {
      read_energy_uj(zone);
    } catch (const Error& e) {
      const bool hint = std::string(e.what()).find("/sys/class/powercap") != std::string::npos;
      return e.code() == Errc::permission_denied && hint ? 0 : 1;
    }
    return 2;
  });
  CHECK(rc == 0);
}

TEST_CASE("PowercapProbe reads through discovered channels", "[powercap][probe]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 100).subzone(0, 1, "dram", 20);
  const PowercapProbe probe(tree.root());
  REQUIRE(probe.support().supported());
  REQUIRE(probe.discover().size() == 2);
  CHECK(probe.read("cpu:0:package-0").raw_energy == 100);
  tree.set_energy(0, 1, 25);
  CHECK(probe.read("cpu:0:package-0:dram").raw_energy == 25);
  CHECK(code_of([&] { probe.read("cpu:0:core"); }) == Errc::unknown_channel);

  std::filesystem::remove(tree.zone_dir(0) / "energy_uj");
  try {
    probe.read("cpu:0:package-0");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::read_failure);
    CHECK(std::string(e.what()).find("cpu:0:package-0") != std::string::npos);
  }
}

TEST_CASE("PowercapProbe on an unsupported root defers the failure", "[powercap][probe]") {
  fixture::TempDir empty;
  const PowercapProbe probe(empty.path());
  CHECK_FALSE(probe.support().supported());
  CHECK_THROWS_AS(probe.discover(), UnsupportedHostError);
}

TEST_CASE("ENERGY_PROBE_ROOT overrides the default root", "[powercap][env]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 1);
  ::setenv(kPowercapRootEnv, tree.root().c_str(), 1);
  CHECK(default_powercap_root() == tree.root());
  CHECK(PowercapProbe().root() == tree.root());
  ::unsetenv(kPowercapRootEnv);
  CHECK(default_powercap_root() == std::filesystem::path("/sys/class/powercap"));
}

TEST_CASE("PowercapProbe supports concurrent reads", "[powercap][probe][concurrency]") {
  PowercapTree tree;
  tree.zone(0, "package-0", 100).subzone(0, 0, "core", 50);
  const PowercapProbe probe(tree.root());
  std::atomic<int> bad{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 200; ++i) {
        if (probe.read("cpu:0:package-0").raw_energy != 100) ++bad;
        if (probe.read("cpu:0:package-0:core").raw_energy != 50) ++bad;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(bad == 0);
}
