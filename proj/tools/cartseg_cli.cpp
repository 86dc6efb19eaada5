#include <cstdio>

int main()
{
    std::puts("cartseg: subcommands not wired up yet");
    return 0;
}
