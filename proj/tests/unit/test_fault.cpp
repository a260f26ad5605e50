#include <doctest.h>

#include <stdexcept>
#include <string>

#include "spotsim/fault.hpp"

using namespace spotsim;

TEST_CASE("mechanism names parse case-insensitively and round-trip") {
  MechanismKind m;
  CHECK(parse_mechanism("None", m));
  CHECK(m == MechanismKind::None);
  CHECK(parse_mechanism("checkpointing", m));
  CHECK(m == MechanismKind::Checkpointing);
  CHECK(parse_mechanism("MIGRATION", m));
  CHECK(m == MechanismKind::Migration);
  CHECK(parse_mechanism("Duplication", m));
  CHECK(m == MechanismKind::Duplication);
  CHECK_FALSE(parse_mechanism("teleportation", m));

  for (auto kind : {MechanismKind::None, MechanismKind::Checkpointing, MechanismKind::Migration,
                    MechanismKind::Duplication}) {
    MechanismKind back;
    CHECK(parse_mechanism(to_string(kind), back));
    CHECK(back == kind);
  }
}

TEST_CASE("state save and restore times follow memory size at the configured rates") {
  const TransferRates rates;

  // Serialization at 63.67 MB/s, rounded up to whole seconds.
  CHECK(suspend_time(1740, rates) == 28);
  CHECK(suspend_time(7680, rates) == 121);
  CHECK(suspend_time(15360, rates) == 242);
  CHECK(suspend_time(7168, rates) == 113);

  // Local restore at 81.27 MB/s.
  CHECK(resume_time(1740, true, rates) == 22);
  CHECK(resume_time(7680, true, rates) == 95);
  CHECK(resume_time(15360, true, rates) == 189);
  CHECK(resume_time(7168, true, rates) == 89);

  // Cross-datacenter restore at 40.64 MB/s.
  CHECK(resume_time(1740, false, rates) == 43);
  CHECK(resume_time(7680, false, rates) == 189);
  CHECK(resume_time(15360, false, rates) == 378);
  CHECK(resume_time(7168, false, rates) == 177);

  CHECK_THROWS_AS(suspend_time(0, rates), std::domain_error);
  CHECK_THROWS_AS(resume_time(-5, true, rates), std::domain_error);
}

TEST_CASE("relocation cost estimates round the remaining occupancy up to whole hours") {
  // Exactly one hour of restore plus remaining work.
  CHECK(migration_cost(22, 3578, 40000) == 40000);
  // One second over the hour adds a second paid hour.
  CHECK(migration_cost(22, 3579, 40000) == 80000);
  // A restore alone still occupies a billable hour.
  CHECK(migration_cost(22, 0, 40000) == 40000);
  CHECK(migration_cost(189, 7000, 31000) == 2 * 31000);
}
