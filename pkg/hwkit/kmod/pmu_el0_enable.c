// SPDX-License-Identifier: GPL-2.0
/*
 * pmu_el0_enable: grant EL0 access to the ARMv8 PMU and point event
 * counter 0 at branch mispredictions (BR_MIS_PRED, event 0x10).
 *
 * Loading programs every online CPU:
 *   pmuserenr_el0  <- EN|SW|CR|ER      user-space PMU access
 *   pmselr_el0     <- 0                select event counter 0
 *   pmxevtyper_el0 <- 0x10             BR_MIS_PRED
 *   pmcntenset_el0 <- counter 0 + cycle counter
 *   pmcr_el0       |= E|P|C            master enable, reset counters
 *
 * Unloading stops the counters and clears pmuserenr_el0, restoring
 * privileged-only access. Nothing else in the system is touched.
 */

#include <linux/init.h>
#include <linux/kernel.h>
#include <linux/module.h>
#include <linux/smp.h>

#define PMU_EVENT_BR_MIS_PRED 0x10UL

#define PMUSERENR_EN (1UL << 0)
#define PMUSERENR_SW (1UL << 1)
#define PMUSERENR_CR (1UL << 2)
#define PMUSERENR_ER (1UL << 3)

#define PMCR_E (1UL << 0)
#define PMCR_P (1UL << 1)
#define PMCR_C (1UL << 2)

#define PMCNTEN_COUNTER0 (1UL << 0)
#define PMCNTEN_CYCLE (1UL << 31)

static void pmu_grant(void *unused)
{
	unsigned long pmcr;

	asm volatile("msr pmuserenr_el0, %0" ::"r"(
		PMUSERENR_EN | PMUSERENR_SW | PMUSERENR_CR | PMUSERENR_ER));
	asm volatile("isb");
	asm volatile("msr pmselr_el0, %0" ::"r"(0UL));
	asm volatile("isb");
	asm volatile("msr pmxevtyper_el0, %0" ::"r"(PMU_EVENT_BR_MIS_PRED));
	asm volatile("msr pmcntenset_el0, %0" ::"r"(PMCNTEN_COUNTER0 | PMCNTEN_CYCLE));
	asm volatile("mrs %0, pmcr_el0" : "=r"(pmcr));
	asm volatile("msr pmcr_el0, %0" ::"r"(pmcr | PMCR_E | PMCR_P | PMCR_C));
	asm volatile("isb");
}

static void pmu_revoke(void *unused)
{
	asm volatile("msr pmcntenclr_el0, %0" ::"r"(PMCNTEN_COUNTER0 | PMCNTEN_CYCLE));
	asm volatile("msr pmuserenr_el0, %0" ::"r"(0UL));
	asm volatile("isb");
}

static int __init pmu_el0_init(void)
{
	on_each_cpu(pmu_grant, NULL, 1);
	pr_info("pmu_el0_enable: EL0 PMU access granted, event 0x%lx on counter 0\n",
		PMU_EVENT_BR_MIS_PRED);
	return 0;
}

static void __exit pmu_el0_exit(void)
{
	on_each_cpu(pmu_revoke, NULL, 1);
	pr_info("pmu_el0_enable: EL0 PMU access revoked\n");
}

module_init(pmu_el0_init);
module_exit(pmu_el0_exit);

MODULE_LICENSE("GPL");
MODULE_DESCRIPTION("EL0 PMU access with branch-misprediction event preselected");
