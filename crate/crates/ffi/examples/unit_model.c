#include "predflow.h"
#include <stdio.h>
int main(void){ PfModel *m=0; double w=1,b=0,s=1,pm=0,ps=1,lp; 
 if(pf_model_linear_new(1,1,&w,&b,&s,&pm,&ps,&m)!=PF_STATUS_OK) return 1;
 double x=1; pf_exact_log_marginal(m,&x,1,&lp); printf("%s %.6f\n", pf_version(), lp); pf_model_free(m); return 0; }
