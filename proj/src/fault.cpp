#include "spotsim/fault.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

namespace spotsim {

const char* to_string(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::None: return "None";
    case MechanismKind::Checkpointing: return "Checkpointing";
    case MechanismKind::Migration: return "Migration";
    case MechanismKind::Duplication: return "Duplication";
  }
  return "unknown";
}

bool parse_mechanism(std::string_view name, MechanismKind& out) {
  std::string folded(name);
  for (char& c : folded) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (folded == "none") out = MechanismKind::None;
  else if (folded == "checkpointing") out = MechanismKind::Checkpointing;
  else if (folded == "migration") out = MechanismKind::Migration;
  else if (folded == "duplication") out = MechanismKind::Duplication;
  else return false;
  return true;
}

SimTime suspend_time(int memory_mb, const TransferRates& rates) {
  if (memory_mb <= 0 || rates.serialize_mb_s <= 0) {
    throw std::domain_error("suspend_time: need positive memory and rate");
  }
  return static_cast<SimTime>(std::ceil(memory_mb / rates.serialize_mb_s));
}

SimTime resume_time(int memory_mb, bool same_dc, const TransferRates& rates) {
  const double rate = same_dc ? rates.restore_same_dc_mb_s : rates.restore_cross_dc_mb_s;
  if (memory_mb <= 0 || rate <= 0) {
    throw std::domain_error("resume_time: need positive memory and rate");
  }
  return static_cast<SimTime>(std::ceil(memory_mb / rate));
}

MicroUsd migration_cost(SimTime resume_s, SimTime remaining_s, MicroUsd hourly_price) {
  const SimTime total = resume_s + remaining_s;
  const SimTime hours = (total + kSecondsPerHour - 1) / kSecondsPerHour;
  return hours * hourly_price;
}

}  // namespace spotsim
