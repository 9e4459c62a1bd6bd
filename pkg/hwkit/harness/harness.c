/*
 * harness: run one linked btb_probe gadget with PMU counting and print
 * the CSV line "B,N,C".
 *
 * usage: harness B N [warmup] [cpu]
 *   B, N    echoed verbatim into the output line (the binary cannot
 *           recover them from the gadget, so the CSV stays self-describing)
 *   warmup  untimed gadget runs before the measured one (default 10)
 *   cpu     pin to this core before running (default: leave affinity alone)
 *
 * C is the branch-misprediction delta (pmevcntr0_el0) across exactly one
 * gadget invocation; both counter reads sit between instruction
 * synchronization barriers. Requires the pmu_el0_enable kernel module:
 * without it the counter read traps and the harness exits 2 with a hint.
 */

#define _GNU_SOURCE
#include <inttypes.h>
#include <sched.h>
#include <signal.h>
#include <stdio.h>
#include <stdlib.h>
#include <unistd.h>

extern void btb_probe(void);

static uint64_t read_mispred(void)
{
	uint64_t v;
	__asm__ volatile("isb\n\tmrs %0, pmevcntr0_el0\n\tisb" : "=r"(v));
	return v;
}

static void sigill_handler(int sig)
{
	(void)sig;
	fprintf(stderr, "harness: PMU counter unreadable at EL0; "
			"load the pmu_el0_enable kernel module first\n");
	_exit(2);
}

int main(int argc, char **argv)
{
	long b, n, warmup, cpu, i;
	uint64_t before, after;

	if (argc < 3 || argc > 5) {
		fprintf(stderr, "usage: %s B N [warmup] [cpu]\n", argv[0]);
		return 1;
	}
	b = strtol(argv[1], NULL, 0);
	n = strtol(argv[2], NULL, 0);
	warmup = argc > 3 ? strtol(argv[3], NULL, 0) : 10;
	cpu = argc > 4 ? strtol(argv[4], NULL, 0) : -1;

	if (cpu >= 0) {
		cpu_set_t mask;
		CPU_ZERO(&mask);
		CPU_SET((int)cpu, &mask);
		if (sched_setaffinity(0, sizeof(mask), &mask) != 0) {
			perror("harness: sched_setaffinity");
			return 1;
		}
	}
	signal(SIGILL, sigill_handler);

	/* placement is the loader's call; record where the gadget landed */
	fprintf(stderr, "# btb_probe loaded at %p\n", (void *)btb_probe);

	for (i = 0; i < warmup; i++)
		btb_probe();

	before = read_mispred();
	btb_probe();
	after = read_mispred();

	printf("%ld,%ld,%" PRIu64 "\n", b, n, after - before);
	return 0;
}
