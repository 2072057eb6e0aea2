#include <cstdio>

int main() {
  std::puts("lgpt: subcommands not wired up yet");
  return 1;
}
