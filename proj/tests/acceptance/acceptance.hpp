#pragma once

#include <functional>
#include <string>
#include <vector>

#include "polypforge/classifier.hpp"
#include "polypforge/dataset.hpp"
#include "polypforge/gan.hpp"
#include "polypforge/toy_domain.hpp"

namespace acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::vector<Criterion> oracle_criteria();
std::vector<Criterion> toy_criteria();

// Shared toy setup.
std::vector<polypforge::data::ImageTile> toy_tiles(std::uint64_t seed,
                                                   std::vector<polypforge::toy::ToyClassSpec> classes,
                                                   const std::string& id_prefix = {}, int image_size = 32);
std::vector<polypforge::data::ImageTile> only(const std::vector<polypforge::data::ImageTile>& tiles,
                                              const std::string& label);
polypforge::classify::ClassifierConfig toy_classifier(std::uint64_t seed);
polypforge::gan::GanConfig toy_gan(std::uint64_t seed);
double median(std::vector<double> v);
std::string fmt(double v, int digits = 4);

}  // namespace acceptance
