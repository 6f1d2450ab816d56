// Oscillating controls for the three-state example: J(u_N) - 1 and |u_N|.

#include <cstdio>

#include "singulo/singulo.hpp"

int main() {
  using namespace singulo;
  const std::vector<int> Ns{8, 16, 32, 64, 128};
  const Example1Family fam = example1_family(Ns);
  for (std::size_t i = 0; i < Ns.size(); ++i)
    std::printf("N=%-4d J-1=%-12.4e x3(1)=%-12.4e |u|=%.4e\n", Ns[i], fam.J[i] - 1, fam.x3_end[i],
                fam.family.entries[i].l2norm);
}
