#include <chrono>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "acceptance.hpp"
#include "polypforge/error.hpp"
#include "polypforge/logging.hpp"

namespace {

std::set<std::string> parse_only(int argc, char** argv) {
  std::set<std::string> names;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) != "--only") continue;
    std::stringstream list(argv[i + 1]);
    for (std::string n; std::getline(list, n, ',');) names.insert(n);
  }
  return names;
}

}  // namespace

int main(int argc, char** argv) {
  polypforge::init_logging_from_env("warn");
  polypforge::log_to_stderr();
  auto criteria = acceptance::oracle_criteria();
  for (auto& c : acceptance::toy_criteria()) criteria.push_back(std::move(c));

  const auto only = parse_only(argc, argv);
  if (argc > 1 && std::string(argv[1]) == "--list") {
    for (const auto& c : criteria) std::cout << c.name << "\n";
    return 0;
  }

  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.name)) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    acceptance::Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = seconds <= c.budget_seconds;
    const bool pass = o.pass && in_budget;
    failed += !pass;
    std::ostringstream took;
    took << std::fixed << std::setprecision(seconds < 10 ? 2 : 0) << seconds;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << took.str() << " s, budget "
              << c.budget_seconds << " s" << (in_budget ? "" : ", OVER BUDGET") << "]"
              << std::endl;
  }
  std::cout << (ran - failed) << "/" << ran << " acceptance criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
