#pragma once

// Umbrella header:
//
//   #include <energyprobe/energyprobe.hpp>
//   energyprobe::EnergyTracker tracker;
//   tracker.start();
//   // code to measure
//   tracker.stop();
//   tracker.print_energy();
//   tracker.save_csv("results.csv");

#include "energyprobe/error.hpp"
#include "energyprobe/fake_probe.hpp"
#include "energyprobe/gpu.hpp"
#include "energyprobe/measurement.hpp"
#include "energyprobe/powercap.hpp"
#include "energyprobe/probe.hpp"
#include "energyprobe/report.hpp"
#include "energyprobe/stats.hpp"
#include "energyprobe/tracker.hpp"
