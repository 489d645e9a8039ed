// Measures a region of code in-process and appends the result to a CSV.
//
//   ./measure_region [out.csv]
//
// Honors ENERGY_PROBE_ROOT, so it also runs against a fixture tree.

#include <cstdlib>
#include <iostream>
#include <numeric>
#include <vector>

#include "energyprobe/energyprobe.hpp"

int main(int argc, char** argv) {
  try {
    energyprobe::EnergyTracker tracker("sum_of_squares");
    tracker.start();
    std::vector<double> v(5'000'000);
    std::iota(v.begin(), v.end(), 0.0);
    volatile double sink = std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
    (void)sink;
    tracker.stop();
    tracker.print_energy();
    if (argc > 1) tracker.save_csv(argv[1]);
  } catch (const energyprobe::Error& e) {
    std::cerr << e.what() << "\n";
    return EXIT_FAILURE;
  }
  return EXIT_SUCCESS;
}
