# 模块的调用逻辑：每个实验阶段继承于BaseModule，标注输入输出类型，Thread_Task里只做本阶段的事
# PipeLine的逻辑：把若干阶段串成一条管线，只需要第一个阶段的输入，后面的阶段自动衔接，最后一个阶段的输出就是管线的输出
# 阶段内部的扇出由PipeLine统一限流，结果记录经过PipeLine的锁写入同一个记录文件

# 举个例子，evaluate 子命令先跑 Checkpoint_Module -> Selection_Module -> Attribute_Module 得到归因图
# 再分别把归因图交给 Alignment_Module 和 Faithfulness_Module，网络解剖则是 Checkpoint_Module -> Dissection_Module
# report 只需要 Report_Module，从记录重新生成表格和图，和前面的管线互不依赖
